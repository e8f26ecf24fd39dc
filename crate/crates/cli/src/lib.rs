//! Experiment runner: TOML configs in, policies and wealth distributions out.

pub mod config;
pub mod data;
pub mod heatmap;
pub mod pipeline;

use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Numerical(_) => 2,
            _ => 1,
        }
    }
}

impl From<nnport::Error> for CliError {
    fn from(e: nnport::Error) -> Self {
        use nnport::Error as E;
        match e {
            E::Diverged { .. } | E::Insolvent(_) | E::InvalidScalarization(_) => CliError::Numerical(e.to_string()),
            E::Io(io) => CliError::Io(io),
            other => CliError::Validation(other.to_string()),
        }
    }
}

/// `./recipes` when present, else the one shipped with the source tree.
pub fn default_recipes_dir() -> PathBuf {
    let local = PathBuf::from("recipes");
    if local.is_dir() {
        return local;
    }
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../recipes")
}

pub fn recipe_path(dir: &Path, name: &str) -> Result<PathBuf, CliError> {
    let p = dir.join(format!("{name}.toml"));
    if p.is_file() {
        return Ok(p);
    }
    let mut known: Vec<String> = std::fs::read_dir(dir)
        .map(|it| {
            it.filter_map(|e| e.ok())
                .filter_map(|e| e.file_name().to_str()?.strip_suffix(".toml").map(str::to_string))
                .collect()
        })
        .unwrap_or_default();
    known.sort();
    Err(CliError::Validation(format!("unknown recipe '{name}' in {} (known: {})", dir.display(), known.join(", "))))
}
