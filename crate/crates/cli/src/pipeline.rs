//! data -> train -> evaluate -> summarize, plus the compound experiments.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use nnport::{
    embedding_gamma, empirical_cvar, simulate_closed_form_dsq, summarize, terminal_wealth_all, train, ClosedFormDsqParams,
    DistributionSummary, Exec, FeatureTransform, InvestmentHorizon, NetTopology, ObjectiveKind, ObjectiveSpec,
    PolicyNetwork, ReturnPathSet, TrainConfig,
};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Experiment};
use crate::data::build_paths;
use crate::heatmap::{linspace, write_heatmaps};
use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailStats {
    pub alpha: f64,
    pub cvar: f64,
    pub var: f64,
    /// `rho * mean + CVaR`, the reward form of the mean-CVaR objective.
    pub value_function: f64,
}

/// Medians of the batch objective over the first and last tenth of steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trend {
    pub first_decile_median: f64,
    pub last_decile_median: f64,
}

impl Trend {
    pub fn improved(&self) -> bool {
        self.last_decile_median <= self.first_decile_median
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub objective: ObjectiveSpec,
    pub final_full_objective: f64,
    pub xi_star: Option<f64>,
    pub train: DistributionSummary,
    pub test: Option<DistributionSummary>,
    pub tail: Option<TailStats>,
    pub trend: Trend,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingReport {
    pub rho: f64,
    pub gamma_tilde: f64,
    pub dsq: StageReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPoint {
    pub rho: f64,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemivarianceReport {
    pub rho: f64,
    pub target_mean: f64,
    pub calibration: Vec<CalibrationPoint>,
    pub msemiv: StageReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub stage: StageReport,
    pub closed_form: Option<DistributionSummary>,
    pub embedding: Option<EmbeddingReport>,
    pub semivariance: Option<SemivarianceReport>,
}

/// A trained policy with its terminal wealth on the data sets.
pub struct Stage {
    pub net: PolicyNetwork,
    pub report: StageReport,
    pub wealth_train: Vec<f64>,
    pub wealth_test: Option<Vec<f64>>,
    log: Vec<u8>,
}

pub struct DataSets {
    pub train: ReturnPathSet,
    pub test: Option<ReturnPathSet>,
}

pub fn build_data(cfg: &ExperimentConfig) -> Result<DataSets, CliError> {
    let train = build_paths(&cfg.data, &cfg.horizon, cfg.exec)?;
    let test = cfg.test_data.as_ref().map(|d| build_paths(d, &cfg.horizon, cfg.exec)).transpose()?;
    if train.n_paths() < cfg.train.batch_size {
        return Err(CliError::Validation(format!(
            "train.batch_size: {} exceeds the {} loaded paths",
            cfg.train.batch_size,
            train.n_paths()
        )));
    }
    Ok(DataSets { train, test })
}

pub fn initial_net(cfg: &ExperimentConfig, n_assets: usize) -> Result<PolicyNetwork, CliError> {
    let top = NetTopology::new(cfg.net.hidden_layers, cfg.net.hidden_width, n_assets)?;
    let scale = cfg.net.wealth_scale.unwrap_or(cfg.horizon.w0);
    Ok(PolicyNetwork::init(top, cfg.net.init_seed)?.with_features(FeatureTransform::scaled(cfg.horizon.maturity, scale))?)
}

fn median(v: &[f64]) -> f64 {
    let mut v = v.to_vec();
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

pub fn run_stage(
    cfg: &ExperimentConfig,
    spec: &ObjectiveSpec,
    tc: &TrainConfig,
    data: &DataSets,
) -> Result<Stage, CliError> {
    let horizon = cfg.horizon();
    let net0 = initial_net(cfg, data.train.n_assets())?;
    let tp = train(&net0, &horizon, &data.train, spec, tc, cfg.exec)?;
    let wealth_train = terminal_wealth_all(&tp.net, &horizon, &data.train, cfg.exec)?;
    let wealth_test = data
        .test
        .as_ref()
        .map(|t| terminal_wealth_all(&tp.net, &horizon, t, cfg.exec))
        .transpose()?;
    let tail = if spec.kind == ObjectiveKind::Mcv {
        let (cvar, var) = empirical_cvar(&wealth_train, spec.alpha)?;
        let mean = wealth_train.iter().sum::<f64>() / wealth_train.len() as f64;
        Some(TailStats { alpha: spec.alpha, cvar, var, value_function: spec.rho * mean + cvar })
    } else {
        None
    };
    let obj: Vec<f64> = tp.history.iter().map(|r| r.batch_objective).collect();
    let k = (obj.len() / 10).max(1);
    let trend = Trend { first_decile_median: median(&obj[..k]), last_decile_median: median(&obj[obj.len() - k..]) };
    let mut log = Vec::new();
    tp.write_log(&mut log, tc.log_every)?;
    let report = StageReport {
        objective: spec.clone(),
        final_full_objective: tp.final_full_objective,
        xi_star: tp.xi_star,
        train: summarize(&wealth_train)?,
        test: wealth_test.as_deref().map(summarize).transpose()?,
        tail,
        trend,
    };
    Ok(Stage { net: tp.net, report, wealth_train, wealth_test, log })
}

fn write_column(path: &Path, header: &str, values: &[f64]) -> Result<(), CliError> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    writeln!(out, "{header}")?;
    for v in values {
        writeln!(out, "{v}")?;
    }
    out.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut s = serde_json::to_string_pretty(value).map_err(nnport::Error::from)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

/// Writes the per-policy artifacts of one stage into `dir`.
pub fn write_stage(cfg: &ExperimentConfig, stage: &Stage, labels: &[String], dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("policy.json"), stage.net.to_json()? + "\n")?;
    fs::write(dir.join("training_log.csv"), &stage.log)?;
    if cfg.outputs.terminal_wealth {
        write_column(&dir.join("terminal_wealth_train.csv"), "terminal_wealth", &stage.wealth_train)?;
        if let Some(w) = &stage.wealth_test {
            write_column(&dir.join("terminal_wealth_test.csv"), "terminal_wealth", w)?;
        }
    }
    let t = linspace(0.0, cfg.horizon.maturity, cfg.heatmap.n_t);
    let w = linspace(0.0, heatmap_w_max(cfg, &stage.report.objective), cfg.heatmap.n_w);
    write_heatmaps(dir, &stage.net, labels, &t, &w)
}

fn heatmap_w_max(cfg: &ExperimentConfig, spec: &ObjectiveSpec) -> f64 {
    match (cfg.heatmap.w_max, spec.kind) {
        (Some(w), _) => w,
        (None, ObjectiveKind::Dsq | ObjectiveKind::Osq) => 4.0 * spec.gamma,
        (None, _) => 4.0 * cfg.horizon.w0,
    }
}

fn summary_rows(rows: &[(&str, &DistributionSummary)]) -> Result<Vec<u8>, CliError> {
    let owned: Vec<(String, DistributionSummary)> = rows.iter().map(|(l, s)| (l.to_string(), (*s).clone())).collect();
    let mut out = Vec::new();
    DistributionSummary::write_csv(&owned, &mut out)?;
    Ok(out)
}

/// Runs the configured experiment and writes every artifact under the output
/// directory.
pub fn run(cfg: &ExperimentConfig) -> Result<RunSummary, CliError> {
    cfg.validate()?;
    let dir = cfg.output_dir();
    fs::create_dir_all(&dir)?;
    let data = build_data(cfg)?;
    let labels = data.train.labels().to_vec();
    let summary = match &cfg.experiment {
        Experiment::Standard => {
            let stage = run_stage(cfg, &cfg.objective, &cfg.train, &data)?;
            write_stage(cfg, &stage, &labels, &dir)?;
            write_distribution_table(&dir, &stage, None)?;
            RunSummary { name: cfg.name.clone(), stage: stage.report, closed_form: None, embedding: None, semivariance: None }
        }
        Experiment::DsqClosedForm { n_steps, n_paths, seed } => {
            let stage = run_stage(cfg, &cfg.objective, &cfg.train, &data)?;
            write_stage(cfg, &stage, &labels, &dir)?;
            let model = cfg.data.model.as_ref().expect("validated model").to_model();
            let p = ClosedFormDsqParams::from_model(&model, cfg.objective.gamma, cfg.horizon.maturity, cfg.horizon.w0)?;
            let w = simulate_closed_form_dsq(&p, &model, *n_paths, *n_steps, *seed, cfg.exec)?;
            if cfg.outputs.terminal_wealth {
                write_column(&dir.join("terminal_wealth_closed_form.csv"), "terminal_wealth", &w)?;
            }
            let cf = summarize(&w)?;
            write_distribution_table(&dir, &stage, Some(("closed_form", &cf)))?;
            RunSummary {
                name: cfg.name.clone(),
                stage: stage.report,
                closed_form: Some(cf),
                embedding: None,
                semivariance: None,
            }
        }
        Experiment::Embedding => {
            let mv = run_stage(cfg, &cfg.objective, &cfg.train, &data)?;
            write_stage(cfg, &mv, &labels, &dir.join("mv"))?;
            let rho = cfg.objective.rho;
            let gamma_tilde = embedding_gamma(rho, mv.report.train.mean)?;
            let spec = ObjectiveSpec::dsq(gamma_tilde);
            let tc = TrainConfig { seed: nnport::rng::derive_seed(cfg.train.seed, 1), ..cfg.train.clone() };
            let dsq = run_stage(cfg, &spec, &tc, &data)?;
            write_stage(cfg, &dsq, &labels, &dir.join("dsq"))?;
            let mut rows = vec![("mv_train", &mv.report.train), ("dsq_train", &dsq.report.train)];
            if let (Some(a), Some(b)) = (&mv.report.test, &dsq.report.test) {
                rows.push(("mv_test", a));
                rows.push(("dsq_test", b));
            }
            fs::write(dir.join("comparison.csv"), summary_rows(&rows)?)?;
            RunSummary {
                name: cfg.name.clone(),
                stage: mv.report,
                closed_form: None,
                embedding: Some(EmbeddingReport { rho, gamma_tilde, dsq: dsq.report }),
                semivariance: None,
            }
        }
        Experiment::MeanMatchedSemivariance { rho_bracket, mean_tolerance, max_iter } => {
            let osq = run_stage(cfg, &cfg.objective, &cfg.train, &data)?;
            write_stage(cfg, &osq, &labels, &dir.join("osq"))?;
            let target = osq.report.train.mean;
            let (rho, calibration, msv) = match_mean(cfg, &data, target, *rho_bracket, *mean_tolerance, *max_iter)?;
            write_stage(cfg, &msv, &labels, &dir.join("msemiv"))?;
            let mut rows = vec![("osq_train", &osq.report.train), ("msemiv_train", &msv.report.train)];
            if let (Some(a), Some(b)) = (&osq.report.test, &msv.report.test) {
                rows.push(("osq_test", a));
                rows.push(("msemiv_test", b));
            }
            fs::write(dir.join("comparison.csv"), summary_rows(&rows)?)?;
            RunSummary {
                name: cfg.name.clone(),
                stage: osq.report,
                closed_form: None,
                embedding: None,
                semivariance: Some(SemivarianceReport { rho, target_mean: target, calibration, msemiv: msv.report }),
            }
        }
    };
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}

fn write_distribution_table(dir: &Path, stage: &Stage, extra: Option<(&str, &DistributionSummary)>) -> Result<(), CliError> {
    let mut rows: Vec<(&str, &DistributionSummary)> = extra.into_iter().collect();
    rows.push(("nn_train", &stage.report.train));
    if let Some(t) = &stage.report.test {
        rows.push(("nn_test", t));
    }
    fs::write(dir.join("distribution.csv"), summary_rows(&rows)?)?;
    Ok(())
}

/// Searches `rho` so that the mean-semivariance policy's training mean
/// matches `target`. The mean falls as `rho` grows; the search runs
/// regula falsi (Illinois variant) on `log rho`, reusing one training seed
/// so trials differ only in `rho`.
fn match_mean(
    cfg: &ExperimentConfig,
    data: &DataSets,
    target: f64,
    bracket: [f64; 2],
    tol: f64,
    max_iter: usize,
) -> Result<(f64, Vec<CalibrationPoint>, Stage), CliError> {
    let mut points = Vec::new();
    let mut trial = |rho: f64| -> Result<(f64, Stage), CliError> {
        let stage = run_stage(cfg, &ObjectiveSpec::msemiv(rho), &cfg.train, data)?;
        let gap = stage.report.train.mean - target;
        points.push(CalibrationPoint { rho, mean: stage.report.train.mean });
        eprintln!("[calibrate] rho = {rho:.6e}, mean = {:.4}, target = {target:.4}", stage.report.train.mean);
        Ok((gap, stage))
    };
    let (mut a, mut b) = (bracket[0].ln(), bracket[1].ln());
    let (mut fa, sa) = trial(a.exp())?;
    let (mut fb, sb) = trial(b.exp())?;
    let mut best = if fa.abs() <= fb.abs() { (a.exp(), fa, sa) } else { (b.exp(), fb, sb) };
    if fa.signum() == fb.signum() {
        return Err(CliError::Numerical(format!(
            "target mean {target} not bracketed by rho in [{}, {}]",
            bracket[0], bracket[1]
        )));
    }
    let mut side = 0i8;
    for _ in 0..max_iter {
        if best.1.abs() <= tol * target.abs() {
            break;
        }
        let c = (a * fb - b * fa) / (fb - fa);
        let (fc, sc) = trial(c.exp())?;
        if fc.abs() < best.1.abs() {
            best = (c.exp(), fc, sc);
        }
        if fc.signum() == fb.signum() {
            b = c;
            fb = fc;
            if side == -1 {
                fa *= 0.5;
            }
            side = -1;
        } else {
            a = c;
            fa = fc;
            if side == 1 {
                fb *= 0.5;
            }
            side = 1;
        }
    }
    if best.1.abs() > tol * target.abs() {
        return Err(CliError::Numerical(format!(
            "mean matching stopped {:.3e} away from the target after {max_iter} trials",
            best.1
        )));
    }
    Ok((best.0, points, best.2))
}

/// Evaluates a saved policy on the configured test set (training set when
/// none is configured) and writes `terminal_wealth_eval.csv` and
/// `eval_summary.json`.
pub fn evaluate(cfg: &ExperimentConfig, net: &PolicyNetwork, dir: &Path) -> Result<DistributionSummary, CliError> {
    cfg.validate()?;
    let horizon: InvestmentHorizon = cfg.horizon();
    let d = cfg.test_data.as_ref().unwrap_or(&cfg.data);
    let set = build_paths(d, &cfg.horizon, cfg.exec)?;
    let w = terminal_wealth_all(net, &horizon, &set, cfg.exec)?;
    let s = summarize(&w)?;
    fs::create_dir_all(dir)?;
    write_column(&dir.join("terminal_wealth_eval.csv"), "terminal_wealth", &w)?;
    write_json(&dir.join("eval_summary.json"), &s)?;
    Ok(s)
}

/// Writes the configured path sets as binary caches.
pub fn generate_data(cfg: &ExperimentConfig, dir: &Path, exec: Exec) -> Result<Vec<std::path::PathBuf>, CliError> {
    cfg.validate()?;
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let train = build_paths(&cfg.data, &cfg.horizon, exec)?;
    let p = dir.join("paths_train.bin");
    train.save(&p)?;
    written.push(p);
    if let Some(t) = &cfg.test_data {
        let p = dir.join("paths_test.bin");
        build_paths(t, &cfg.horizon, exec)?.save(&p)?;
        written.push(p);
    }
    Ok(written)
}
