//! Declarative experiment configuration (TOML) and its validation.

use std::path::{Path, PathBuf};

use nnport::rng::derive_seed;
use nnport::{Exec, InvestmentHorizon, KouAssetParams, MarketModel, ObjectiveKind, ObjectiveSpec, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub data: DataConfig,
    /// Out-of-sample set; evaluation only.
    #[serde(default)]
    pub test_data: Option<DataConfig>,
    pub horizon: HorizonConfig,
    pub objective: ObjectiveSpec,
    pub net: NetConfig,
    pub train: TrainConfig,
    #[serde(default)]
    pub outputs: OutputConfig,
    #[serde(default)]
    pub experiment: Experiment,
    #[serde(default)]
    pub heatmap: HeatmapConfig,
    /// Overrides applied by `--full`.
    #[serde(default)]
    pub full: FullScale,
    #[serde(default)]
    pub exec: Exec,
}

fn default_name() -> String {
    "experiment".into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Simulate,
    Bootstrap,
    Load,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub source: Source,
    #[serde(default)]
    pub n_paths: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub model: Option<ModelConfig>,
    #[serde(default)]
    pub history: Option<HistoryConfig>,
    /// Binary path-set cache for `source = "load"`.
    #[serde(default)]
    pub cache: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub assets: Vec<AssetConfig>,
    /// Full Brownian correlation matrix; identity when absent.
    #[serde(default)]
    pub correlation: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssetConfig {
    pub label: String,
    pub mu: f64,
    #[serde(default)]
    pub risk_free: bool,
    #[serde(default)]
    pub sigma: f64,
    #[serde(default)]
    pub lambda: f64,
    #[serde(default = "half")]
    pub nu: f64,
    #[serde(default = "two")]
    pub zeta1: f64,
    #[serde(default = "two")]
    pub zeta2: f64,
}

fn half() -> f64 {
    0.5
}
fn two() -> f64 {
    2.0
}

impl ModelConfig {
    pub fn to_model(&self) -> MarketModel {
        let params = self
            .assets
            .iter()
            .map(|a| {
                if a.risk_free {
                    KouAssetParams::risk_free(a.mu)
                } else {
                    KouAssetParams {
                        mu: a.mu,
                        sigma: a.sigma,
                        jump_intensity: a.lambda,
                        up_prob: a.nu,
                        zeta1: a.zeta1,
                        zeta2: a.zeta2,
                    }
                }
            })
            .collect();
        let mut m = MarketModel::independent(params);
        if let Some(c) = &self.correlation {
            m.brownian_corr = c.clone();
        }
        m.risk_free = self.assets.iter().map(|a| a.risk_free).collect();
        m.labels = self.assets.iter().map(|a| a.label.clone()).collect();
        m
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistoryConfig {
    /// Monthly returns CSV, relative to the config file.
    #[serde(default)]
    pub file: Option<PathBuf>,
    /// Generate the monthly history from a parametric model instead.
    #[serde(default)]
    pub synthetic: Option<SyntheticHistory>,
    #[serde(default)]
    pub from: Option<String>,
    #[serde(default)]
    pub to: Option<String>,
    pub expected_block_months: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticHistory {
    pub model: ModelConfig,
    pub start_year: u32,
    pub months: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HorizonConfig {
    pub maturity: f64,
    pub n_rebalance: usize,
    pub w0: f64,
    /// One amount for every rebalancing event, or a full schedule.
    #[serde(default)]
    pub contributions: Contributions,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Contributions {
    Constant(f64),
    Schedule(Vec<f64>),
}

impl Default for Contributions {
    fn default() -> Self {
        Contributions::Constant(0.0)
    }
}

impl HorizonConfig {
    pub fn to_horizon(&self) -> nnport::Result<InvestmentHorizon> {
        let q = match &self.contributions {
            Contributions::Constant(c) => vec![*c; self.n_rebalance],
            Contributions::Schedule(v) => v.clone(),
        };
        InvestmentHorizon::new(self.maturity, self.n_rebalance, self.w0, q)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    pub hidden_layers: usize,
    pub hidden_width: usize,
    #[serde(default)]
    pub init_seed: u64,
    /// Wealth feature scale; `w0` when absent.
    #[serde(default)]
    pub wealth_scale: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default)]
    pub dir: Option<PathBuf>,
    /// Write per-path terminal wealth files.
    #[serde(default = "yes")]
    pub terminal_wealth: bool,
}

fn yes() -> bool {
    true
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: None, terminal_wealth: true }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Experiment {
    /// Train once, evaluate on the training and test sets.
    #[default]
    Standard,
    /// Also simulate the unconstrained closed-form quadratic-target control.
    DsqClosedForm { n_steps: usize, n_paths: usize, seed: u64 },
    /// Train mean-variance, derive the embedded target, train the quadratic
    /// target problem on the same paths and compare.
    Embedding,
    /// Train the configured one-sided quadratic objective, then search the
    /// mean-semivariance risk aversion whose mean matches it.
    MeanMatchedSemivariance {
        rho_bracket: [f64; 2],
        /// Relative tolerance on the matched mean.
        mean_tolerance: f64,
        max_iter: usize,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeatmapConfig {
    #[serde(default = "fifty")]
    pub n_t: usize,
    #[serde(default = "fifty")]
    pub n_w: usize,
    /// Upper wealth bound; `4 gamma` for target objectives, else `4 w0`.
    #[serde(default)]
    pub w_max: Option<f64>,
}

fn fifty() -> usize {
    50
}

impl Default for HeatmapConfig {
    fn default() -> Self {
        Self { n_t: 50, n_w: 50, w_max: None }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FullScale {
    #[serde(default)]
    pub n_paths: Option<usize>,
    #[serde(default)]
    pub test_n_paths: Option<usize>,
    #[serde(default)]
    pub max_steps: Option<usize>,
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub closed_form_paths: Option<usize>,
    #[serde(default)]
    pub closed_form_steps: Option<usize>,
}

/// Command-line overrides applied after parsing.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub full: bool,
    pub rho: Option<f64>,
    pub gamma: Option<f64>,
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let de = toml::Deserializer::parse(text).map_err(|e| CliError::Validation(e.to_string()))?;
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            let msg = inner.message().trim().to_string();
            CliError::Validation(if path == "." { msg } else { format!("{path}: {msg}") })
        })
    }

    /// Reads, resolves relative file references against the config's
    /// directory, and validates.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for d in std::iter::once(&mut cfg.data).chain(cfg.test_data.as_mut()) {
            if let Some(h) = d.history.as_mut() {
                if let Some(f) = h.file.as_mut() {
                    if f.is_relative() {
                        *f = base.join(&*f);
                    }
                }
            }
            if let Some(c) = d.cache.as_mut() {
                if c.is_relative() {
                    *c = base.join(&*c);
                }
            }
        }
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if o.full {
            let f = self.full.clone();
            if let Some(n) = f.n_paths {
                self.data.n_paths = n;
            }
            if let (Some(n), Some(t)) = (f.test_n_paths, self.test_data.as_mut()) {
                t.n_paths = n;
            }
            if let Some(s) = f.max_steps {
                self.train.max_steps = s;
            }
            if let Some(b) = f.batch_size {
                self.train.batch_size = b;
            }
            if let Experiment::DsqClosedForm { n_steps, n_paths, .. } = &mut self.experiment {
                if let Some(s) = f.closed_form_steps {
                    *n_steps = s;
                }
                if let Some(n) = f.closed_form_paths {
                    *n_paths = n;
                }
            }
        }
        if let Some(s) = o.seed {
            self.data.seed = s;
            if let Some(t) = self.test_data.as_mut() {
                t.seed = derive_seed(s, 1);
            }
            self.train.seed = derive_seed(s, 2);
            self.net.init_seed = derive_seed(s, 3);
            if let Experiment::DsqClosedForm { seed, .. } = &mut self.experiment {
                *seed = derive_seed(s, 4);
            }
        }
        if let Some(r) = o.rho {
            self.objective.rho = r;
        }
        if let Some(g) = o.gamma {
            self.objective.gamma = g;
        }
        if let Some(d) = &o.out {
            self.outputs.dir = Some(d.clone());
        }
    }

    /// Semantic checks; every message starts with the offending field path.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |field: &str, msg: String| Err(CliError::Validation(format!("{field}: {msg}")));
        if let Err(e) = self.horizon.to_horizon() {
            return bad("horizon", e.to_string());
        }
        if let Contributions::Schedule(v) = &self.horizon.contributions {
            if v.len() != self.horizon.n_rebalance {
                return bad(
                    "horizon.contributions",
                    format!("{} entries for n_rebalance = {}", v.len(), self.horizon.n_rebalance),
                );
            }
        }
        if let Err(e) = self.objective.validate() {
            return bad("objective", e.to_string());
        }
        if let Err(e) = nnport::NetTopology::new(self.net.hidden_layers, self.net.hidden_width, 2) {
            return bad("net", e.to_string());
        }
        if let Some(s) = self.net.wealth_scale {
            if !(s > 0.0 && s.is_finite()) {
                return bad("net.wealth_scale", format!("must be positive, got {s}"));
            }
        }
        self.validate_data("data", &self.data)?;
        if let Some(t) = &self.test_data {
            self.validate_data("test_data", t)?;
        }
        if self.data.source != Source::Load && self.train.batch_size > self.data.n_paths {
            return bad(
                "train.batch_size",
                format!("{} exceeds data.n_paths = {}", self.train.batch_size, self.data.n_paths),
            );
        }
        if self.train.max_steps == 0 {
            return bad("train.max_steps", "must be positive".into());
        }
        if let Err(e) = self.train.validate(self.train.batch_size.max(1)) {
            return bad("train", e.to_string());
        }
        if self.heatmap.n_t == 0 || self.heatmap.n_w == 0 {
            return bad("heatmap", "grid must be nonempty".into());
        }
        match &self.experiment {
            Experiment::Standard => {}
            Experiment::DsqClosedForm { n_steps, n_paths, .. } => {
                if self.objective.kind != ObjectiveKind::Dsq {
                    return bad("experiment.kind", "dsq-closed-form needs objective.kind = \"dsq\"".into());
                }
                if *n_steps < self.horizon.n_rebalance || *n_paths == 0 {
                    return bad("experiment", "n_steps must be at least n_rebalance and n_paths positive".into());
                }
                if self.data.source != Source::Simulate {
                    return bad("data.source", "the closed-form comparison needs simulated data".into());
                }
            }
            Experiment::Embedding => {
                if self.objective.kind != ObjectiveKind::Mv {
                    return bad("experiment.kind", "embedding needs objective.kind = \"mv\"".into());
                }
            }
            Experiment::MeanMatchedSemivariance { rho_bracket, mean_tolerance, max_iter } => {
                if self.objective.kind != ObjectiveKind::Osq {
                    return bad("experiment.kind", "mean-matched-semivariance needs objective.kind = \"osq\"".into());
                }
                if !(rho_bracket[0] > 0.0 && rho_bracket[1] > rho_bracket[0]) {
                    return bad("experiment.rho_bracket", "needs 0 < lo < hi".into());
                }
                if !(*mean_tolerance > 0.0) || *max_iter == 0 {
                    return bad("experiment", "mean_tolerance and max_iter must be positive".into());
                }
            }
        }
        Ok(())
    }

    fn validate_data(&self, field: &str, d: &DataConfig) -> Result<(), CliError> {
        let bad = |sub: &str, msg: String| Err(CliError::Validation(format!("{field}.{sub}: {msg}")));
        match d.source {
            Source::Simulate => {
                let Some(m) = &d.model else {
                    return bad("model", "required for source = \"simulate\"".into());
                };
                if let Err(e) = m.to_model().validate() {
                    return bad("model", e.to_string());
                }
            }
            Source::Bootstrap => {
                let Some(h) = &d.history else {
                    return bad("history", "required for source = \"bootstrap\"".into());
                };
                if h.file.is_some() == h.synthetic.is_some() {
                    return bad("history", "set exactly one of file or synthetic".into());
                }
                if let Some(s) = &h.synthetic {
                    if let Err(e) = s.model.to_model().validate() {
                        return bad("history.synthetic.model", e.to_string());
                    }
                }
                if !(h.expected_block_months >= 1.0) {
                    return bad("history.expected_block_months", "must be at least 1".into());
                }
                let months = 12.0 * self.horizon.maturity / self.horizon.n_rebalance as f64;
                if (months - months.round()).abs() > 1e-9 || months.round() < 1.0 {
                    return bad("history", format!("rebalancing interval of {months} months is not a whole number"));
                }
            }
            Source::Load => {
                if d.cache.is_none() {
                    return bad("cache", "required for source = \"load\"".into());
                }
                return Ok(());
            }
        }
        if d.n_paths == 0 {
            return bad("n_paths", "must be positive".into());
        }
        Ok(())
    }

    pub fn horizon(&self) -> InvestmentHorizon {
        self.horizon.to_horizon().expect("validated horizon")
    }

    pub fn output_dir(&self) -> PathBuf {
        self.outputs.dir.clone().unwrap_or_else(|| PathBuf::from("out").join(&self.name))
    }

    pub fn heatmap_w_max(&self) -> f64 {
        self.heatmap.w_max.unwrap_or(match self.objective.kind {
            ObjectiveKind::Dsq | ObjectiveKind::Osq => 4.0 * self.objective.gamma,
            _ => 4.0 * self.horizon.w0,
        })
    }

    /// Labels from the parametric model when there is one, else `asset<i>`.
    pub fn asset_labels(&self, n: usize) -> Vec<String> {
        let model = self
            .data
            .model
            .as_ref()
            .or_else(|| self.data.history.as_ref()?.synthetic.as_ref().map(|s| &s.model));
        match model {
            Some(m) if m.assets.len() == n => m.assets.iter().map(|a| a.label.clone()).collect(),
            _ => (0..n).map(|i| format!("asset{i}")).collect(),
        }
    }
}
