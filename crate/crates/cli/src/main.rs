use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nnport::PolicyNetwork;
use nnport_cli::config::{ExperimentConfig, Overrides};
use nnport_cli::heatmap::{linspace, write_heatmaps};
use nnport_cli::{default_recipes_dir, pipeline, recipe_path, CliError};

#[derive(Parser)]
#[command(name = "nnport", version, about = "Neural-network multi-period portfolio experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    global: Global,
}

#[derive(Args)]
struct Global {
    /// Master seed; data, initialization and batching seeds derive from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (default out/<name>).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Use the `[full]` scale from the config.
    #[arg(long, global = true)]
    full: bool,
    /// Run on one thread.
    #[arg(long, global = true)]
    sequential: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate or bootstrap the configured path sets and cache them.
    GenerateData {
        config: PathBuf,
    },
    /// Run the configured experiment end to end.
    Train {
        config: PathBuf,
    },
    /// Evaluate a saved policy on the configured test set.
    Evaluate {
        config: PathBuf,
        #[arg(long)]
        policy: PathBuf,
    },
    /// Tabulate a saved policy on a (t, wealth) grid.
    Heatmap {
        config: PathBuf,
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        n_t: Option<usize>,
        #[arg(long)]
        n_w: Option<usize>,
        #[arg(long)]
        w_max: Option<f64>,
    },
    /// Run a named recipe from the recipes directory.
    Recipe {
        name: String,
        #[arg(long)]
        rho: Option<f64>,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        recipes_dir: Option<PathBuf>,
    },
}

fn load(path: &std::path::Path, g: &Global, rho: Option<f64>, gamma: Option<f64>) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::load(path)?;
    cfg.apply(&Overrides { seed: g.seed, full: g.full, rho, gamma, out: g.out.clone() });
    if g.sequential {
        cfg.exec = nnport::Exec::Sequential;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn read_policy(path: &std::path::Path) -> Result<PolicyNetwork, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
    Ok(PolicyNetwork::from_json(&text)?)
}

fn train(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let s = pipeline::run(cfg)?;
    let dir = cfg.output_dir();
    let r = &s.stage;
    println!("{}: wrote {}", s.name, dir.display());
    println!("  objective {:?}, full-sample value {:.6}", r.objective.kind, r.final_full_objective);
    println!("  train mean {:.4}, stdev {:.4}", r.train.mean, r.train.stdev);
    if let Some(t) = &r.test {
        println!("  test  mean {:.4}, stdev {:.4}", t.mean, t.stdev);
    }
    if let Some(t) = &r.tail {
        println!("  CVaR_{} {:.4}, VaR {:.4}, value {:.4}", t.alpha, t.cvar, t.var, t.value_function);
    }
    if let Some(cf) = &s.closed_form {
        println!("  closed form mean {:.4}, stdev {:.4}", cf.mean, cf.stdev);
    }
    if let Some(e) = &s.embedding {
        println!("  embedded target {:.4}; dsq mean {:.4}, stdev {:.4}", e.gamma_tilde, e.dsq.train.mean, e.dsq.train.stdev);
    }
    if let Some(m) = &s.semivariance {
        println!("  matched rho {:.6e}; msemiv mean {:.4}, stdev {:.4}", m.rho, m.msemiv.train.mean, m.msemiv.train.stdev);
    }
    if !r.trend.improved() {
        eprintln!("warning: batch objective did not decrease over training");
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    let g = &cli.global;
    match cli.command {
        Command::GenerateData { config } => {
            let cfg = load(&config, g, None, None)?;
            for p in pipeline::generate_data(&cfg, &cfg.output_dir(), cfg.exec)? {
                println!("{}", p.display());
            }
        }
        Command::Train { config } => train(&load(&config, g, None, None)?)?,
        Command::Evaluate { config, policy } => {
            let cfg = load(&config, g, None, None)?;
            let net = read_policy(&policy)?;
            let s = pipeline::evaluate(&cfg, &net, &cfg.output_dir())?;
            println!("mean {:.4}, stdev {:.4}", s.mean, s.stdev);
        }
        Command::Heatmap { config, policy, n_t, n_w, w_max } => {
            let mut cfg = load(&config, g, None, None)?;
            cfg.heatmap.n_t = n_t.unwrap_or(cfg.heatmap.n_t);
            cfg.heatmap.n_w = n_w.unwrap_or(cfg.heatmap.n_w);
            if let Some(w) = w_max {
                if !(w > 0.0 && w.is_finite()) {
                    return Err(CliError::Validation(format!("--w-max: must be positive, got {w}")));
                }
                cfg.heatmap.w_max = Some(w);
            }
            cfg.validate()?;
            let net = read_policy(&policy)?;
            let labels = cfg.asset_labels(net.n_assets());
            let dir = cfg.output_dir();
            std::fs::create_dir_all(&dir)?;
            let t = linspace(0.0, cfg.horizon.maturity, cfg.heatmap.n_t);
            let w = linspace(0.0, cfg.heatmap_w_max(), cfg.heatmap.n_w);
            write_heatmaps(&dir, &net, &labels, &t, &w)?;
            println!("{}", dir.join("heatmap.csv").display());
        }
        Command::Recipe { name, rho, gamma, recipes_dir } => {
            let dir = recipes_dir.unwrap_or_else(default_recipes_dir);
            train(&load(&recipe_path(&dir, &name)?, g, rho, gamma)?)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
