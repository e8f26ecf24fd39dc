//! Mini-batch gradient descent on `(theta, xi)` with Adam and tail iterate
//! averaging.

use std::io::Write;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::market::ReturnPathSet;
use crate::objective::ObjectiveSpec;
use crate::policy::PolicyNetwork;
use crate::rng;
use crate::wealth::{backprop_through_time, roll_forward, terminal_wealth_all, InvestmentHorizon};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_hat: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { step_size: 0.01, beta1: 0.9, beta2: 0.999, eps_hat: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub max_steps: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub adam: AdamConfig,
    #[serde(default = "default_tail")]
    pub tail_average_start_fraction: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_log_every")]
    pub log_every: usize,
    /// Gradient norm cap; non-positive disables clipping.
    #[serde(default = "default_clip")]
    pub grad_clip: f64,
}

fn default_tail() -> f64 {
    0.8
}
fn default_log_every() -> usize {
    100
}
fn default_clip() -> f64 {
    1e3
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_steps: 10_000,
            batch_size: 1_000,
            adam: AdamConfig::default(),
            tail_average_start_fraction: default_tail(),
            seed: 0,
            log_every: default_log_every(),
            grad_clip: default_clip(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, n_paths: usize) -> Result<()> {
        let a = &self.adam;
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.batch_size == 0 || self.batch_size > n_paths {
            return bad(format!("batch_size {} must lie in [1, {n_paths}]", self.batch_size));
        }
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) {
            return bad("Adam betas must lie in [0, 1)".into());
        }
        if !(a.step_size > 0.0 && a.eps_hat > 0.0) {
            return bad("Adam step size and eps_hat must be positive".into());
        }
        if !(0.0..1.0).contains(&self.tail_average_start_fraction) {
            return bad("tail_average_start_fraction must lie in [0, 1)".into());
        }
        Ok(())
    }
}

/// First and second moment estimates of Adam.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub steps: usize,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len], steps: 0 }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(state: &mut AdamState, params: &mut [f64], grad: &[f64], cfg: &AdamConfig) {
    assert_eq!(state.m.len(), grad.len(), "Adam state does not match gradient");
    assert_eq!(params.len(), grad.len(), "parameters do not match gradient");
    state.steps += 1;
    let t = state.steps as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..grad.len() {
        let g = grad[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= cfg.step_size * m_hat / (v_hat.sqrt() + cfg.eps_hat);
    }
}

/// Visits every path once per epoch in a freshly shuffled order.
#[derive(Debug)]
pub struct EpochSampler {
    order: Vec<usize>,
    pos: usize,
    epoch: u64,
    seed: u64,
    batch: usize,
}

impl EpochSampler {
    pub fn new(n_paths: usize, batch: usize, seed: u64) -> Self {
        let mut s = Self { order: (0..n_paths).collect(), pos: 0, epoch: 0, seed, batch };
        s.shuffle();
        s
    }

    fn shuffle(&mut self) {
        self.order.sort_unstable();
        let mut r = rng::stream(self.seed, self.epoch);
        self.order.shuffle(&mut r);
    }

    /// Next batch; the last batch of an epoch may be shorter.
    pub fn next_batch(&mut self) -> &[usize] {
        if self.pos >= self.order.len() {
            self.epoch += 1;
            self.pos = 0;
            self.shuffle();
        }
        let start = self.pos;
        self.pos = (start + self.batch).min(self.order.len());
        &self.order[start..self.pos]
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub batch_objective: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedPolicy {
    /// Tail-averaged network.
    pub net: PolicyNetwork,
    pub xi_star: Option<f64>,
    pub history: Vec<StepRecord>,
    /// Objective of the averaged parameters on the full path set.
    pub final_full_objective: f64,
    pub adam: AdamState,
}

impl TrainedPolicy {
    /// CSV `step,batch_objective,grad_norm` every `log_every` steps plus the
    /// final step.
    pub fn write_log<W: Write>(&self, mut out: W, log_every: usize) -> Result<()> {
        writeln!(out, "step,batch_objective,grad_norm")?;
        let every = log_every.max(1);
        let last = self.history.len().saturating_sub(1);
        for (i, r) in self.history.iter().enumerate() {
            if i % every == 0 || i == last {
                writeln!(out, "{},{},{}", r.step, r.batch_objective, r.grad_norm)?;
            }
        }
        Ok(())
    }
}

/// Trains `net0` on `paths`; see [`train_observed`].
pub fn train(
    net0: &PolicyNetwork,
    horizon: &InvestmentHorizon,
    paths: &ReturnPathSet,
    spec: &ObjectiveSpec,
    cfg: &TrainConfig,
    exec: Exec,
) -> Result<TrainedPolicy> {
    train_observed(net0, horizon, paths, spec, cfg, exec, |_, _| {})
}

/// Trains `net0` and calls `observer(step, params)` with the raw iterate
/// after every update. `params` is `theta` followed, for objectives with an
/// auxiliary variable, by `xi / w0`.
///
/// `xi` is optimized jointly as one extra Adam coordinate, expressed in
/// units of initial wealth and started at `w0`.
pub fn train_observed(
    net0: &PolicyNetwork,
    horizon: &InvestmentHorizon,
    paths: &ReturnPathSet,
    spec: &ObjectiveSpec,
    cfg: &TrainConfig,
    exec: Exec,
    mut observer: impl FnMut(usize, &[f64]),
) -> Result<TrainedPolicy> {
    spec.validate()?;
    cfg.validate(paths.n_paths())?;
    horizon.validate()?;
    if paths.n_periods() != horizon.n_rebalance {
        return Err(Error::InvalidParameter(format!(
            "path set has {} periods, horizon has {} rebalancing events",
            paths.n_periods(),
            horizon.n_rebalance
        )));
    }
    let n_theta = net0.theta().len();
    let xi_scale = horizon.w0;
    let mut params = net0.theta().to_vec();
    if spec.has_xi() {
        params.push(1.0);
    }
    let n = params.len();
    let mut net = net0.clone();
    let mut adam = AdamState::new(n);
    let mut sampler = EpochSampler::new(paths.n_paths(), cfg.batch_size, cfg.seed);
    let tail_start = (cfg.tail_average_start_fraction * cfg.max_steps as f64).floor() as usize;
    let mut avg = params.clone();
    let mut n_avg = 0usize;
    let mut history = Vec::with_capacity(cfg.max_steps);
    let mut grad = vec![0.0; n];

    for step in 0..cfg.max_steps {
        let xi = if spec.has_xi() { params[n_theta] * xi_scale } else { 0.0 };
        let batch_idx = sampler.next_batch().to_vec();
        let batch = roll_forward(&net, horizon, paths, &batch_idx, exec)?;
        let value = spec.evaluate(&batch.terminal_wealth, xi)?.value;
        if !value.is_finite() {
            return Err(Error::Diverged { step });
        }
        let (d_terminal, d_xi) = spec.cotangents(&batch.terminal_wealth, xi)?;
        let g = backprop_through_time(&net, paths, &batch, &d_terminal, exec)?;
        grad[..n_theta].copy_from_slice(&g.d_theta);
        if spec.has_xi() {
            grad[n_theta] = d_xi * xi_scale;
        }
        let norm = grad.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() {
            return Err(Error::Diverged { step });
        }
        if cfg.grad_clip > 0.0 && norm > cfg.grad_clip {
            let s = cfg.grad_clip / norm;
            grad.iter_mut().for_each(|v| *v *= s);
        }
        adam_step(&mut adam, &mut params, &grad, &cfg.adam);
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { step });
        }
        net.set_theta(&params[..n_theta])?;
        history.push(StepRecord { step, batch_objective: value, grad_norm: norm });
        observer(step, &params);
        if step >= tail_start {
            n_avg += 1;
            if n_avg == 1 {
                avg.copy_from_slice(&params);
            } else {
                let w = 1.0 / n_avg as f64;
                for (a, p) in avg.iter_mut().zip(&params) {
                    *a += (p - *a) * w;
                }
            }
        }
    }

    let mut out = net0.clone();
    out.set_theta(&avg[..n_theta])?;
    let xi_star = spec.has_xi().then(|| avg[n_theta] * xi_scale);
    let terminal = terminal_wealth_all(&out, horizon, paths, exec)?;
    let final_full_objective = spec.evaluate(&terminal, xi_star.unwrap_or(0.0))?.value;
    if !final_full_objective.is_finite() {
        return Err(Error::Diverged { step: cfg.max_steps });
    }
    Ok(TrainedPolicy { net: out, xi_star, history, final_full_objective, adam })
}
