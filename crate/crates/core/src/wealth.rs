//! Controlled wealth recursion along return paths and its adjoint.
//!
//! For path `j`: `W(t_0-) = w0`, then for each rebalancing time
//! `W(t_m+) = W(t_m-) + q_m`, `p = f(t_m, W(t_m+))` and
//! `W(t_{m+1}-) = W(t_m+) * sum_i p_i Y_i(t_m)`. No contribution or trade
//! happens at maturity.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{pairwise_sum, Exec, SHARD};
use crate::market::ReturnPathSet;
use crate::policy::{Gradient, PolicyNetwork};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvestmentHorizon {
    pub maturity: f64,
    pub n_rebalance: usize,
    pub w0: f64,
    pub contributions: Vec<f64>,
}

impl InvestmentHorizon {
    pub fn new(maturity: f64, n_rebalance: usize, w0: f64, contributions: Vec<f64>) -> Result<Self> {
        let h = Self { maturity, n_rebalance, w0, contributions };
        h.validate()?;
        Ok(h)
    }

    /// No contributions.
    pub fn lump_sum(maturity: f64, n_rebalance: usize, w0: f64) -> Result<Self> {
        Self::new(maturity, n_rebalance, w0, vec![0.0; n_rebalance])
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.maturity > 0.0 && self.maturity.is_finite()) {
            return Err(Error::InvalidParameter(format!("maturity must be positive, got {}", self.maturity)));
        }
        if self.n_rebalance == 0 {
            return Err(Error::InvalidParameter("at least one rebalancing event required".into()));
        }
        if !(self.w0 > 0.0 && self.w0.is_finite()) {
            return Err(Error::InvalidParameter(format!("w0 must be positive, got {}", self.w0)));
        }
        if self.contributions.len() != self.n_rebalance {
            return Err(Error::InvalidParameter(format!(
                "{} contributions for {} rebalancing events",
                self.contributions.len(),
                self.n_rebalance
            )));
        }
        if self.contributions.iter().any(|q| !(q.is_finite() && *q >= 0.0)) {
            return Err(Error::InvalidParameter("contributions must be finite and non-negative".into()));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        self.maturity / self.n_rebalance as f64
    }

    pub fn rebalance_time(&self, m: usize) -> f64 {
        m as f64 * self.dt()
    }

    fn check(&self, net: &PolicyNetwork, paths: &ReturnPathSet, indices: &[usize]) -> Result<()> {
        self.validate()?;
        if paths.n_periods() != self.n_rebalance {
            return Err(Error::InvalidParameter(format!(
                "path set has {} periods, horizon has {} rebalancing events",
                paths.n_periods(),
                self.n_rebalance
            )));
        }
        if paths.n_assets() != net.n_assets() {
            return Err(Error::InvalidParameter(format!(
                "path set has {} assets, policy has {}",
                paths.n_assets(),
                net.n_assets()
            )));
        }
        if net.topology().n_features != 2 {
            return Err(Error::InvalidParameter("rollout needs the (t, W) feature form".into()));
        }
        if let Some(&j) = indices.iter().find(|&&j| j >= paths.n_paths()) {
            return Err(Error::InvalidParameter(format!("path index {j} out of range")));
        }
        Ok(())
    }
}

/// Terminal wealths of a batch plus, when retained, per-step records
/// `[W(t_m+), activation record]` used by the adjoint sweep.
#[derive(Debug, Clone)]
pub struct WealthTrajectoryBatch {
    pub path_indices: Vec<usize>,
    pub terminal_wealth: Vec<f64>,
    records: Option<Vec<f64>>,
    step_len: usize,
    n_rebalance: usize,
}

impl WealthTrajectoryBatch {
    pub fn len(&self) -> usize {
        self.path_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.path_indices.is_empty()
    }

    pub fn has_records(&self) -> bool {
        self.records.is_some()
    }

    /// `W(t_m+)` on path `k` of the batch.
    pub fn wealth_plus(&self, k: usize, m: usize) -> Option<f64> {
        self.step_record(k, m).map(|r| r[0])
    }

    /// Weights chosen at `t_m` on path `k` of the batch.
    pub fn weights(&self, k: usize, m: usize, n_assets: usize) -> Option<&[f64]> {
        self.step_record(k, m).map(|r| &r[r.len() - n_assets..])
    }

    fn step_record(&self, k: usize, m: usize) -> Option<&[f64]> {
        let recs = self.records.as_ref()?;
        let base = (k * self.n_rebalance + m) * self.step_len;
        recs.get(base..base + self.step_len)
    }
}

#[inline]
fn roll_path(net: &PolicyNetwork, horizon: &InvestmentHorizon, path: &[f64], recs: &mut [f64], step_len: usize) -> Result<f64> {
    let na = net.n_assets();
    let mut w = horizon.w0;
    for (m, rec) in recs.chunks_mut(step_len).enumerate() {
        let wp = w + horizon.contributions[m];
        rec[0] = wp;
        net.forward_into(horizon.rebalance_time(m), wp, &mut rec[1..])?;
        let p = &rec[step_len - na..];
        let y = &path[m * na..(m + 1) * na];
        let growth: f64 = p.iter().zip(y).map(|(a, b)| a * b).sum();
        w = wp * growth;
    }
    Ok(w)
}

/// Rolls wealth forward on the selected paths and retains every step's
/// record for a following [`backprop_through_time`].
pub fn roll_forward(
    net: &PolicyNetwork,
    horizon: &InvestmentHorizon,
    paths: &ReturnPathSet,
    path_indices: &[usize],
    exec: Exec,
) -> Result<WealthTrajectoryBatch> {
    horizon.check(net, paths, path_indices)?;
    let step_len = 1 + net.topology().record_len();
    let n_rb = horizon.n_rebalance;
    let path_len = n_rb * step_len;
    let mut records = vec![0.0; path_indices.len() * path_len];
    let mut terminal_wealth = vec![0.0; path_indices.len()];
    let failed = std::sync::Mutex::new(None);
    exec.for_each_chunk_mut(&mut records, SHARD * path_len, |offset, chunk| {
        let first = offset / path_len;
        for (k, recs) in chunk.chunks_mut(path_len).enumerate() {
            if let Err(e) = roll_path(net, horizon, paths.path(path_indices[first + k]), recs, step_len) {
                failed.lock().unwrap().get_or_insert(e);
                return;
            }
        }
    });
    if let Some(e) = failed.into_inner().unwrap() {
        return Err(e);
    }
    // W(T) = W(t_last+) * p . Y, recovered from the final step record.
    let na = net.n_assets();
    for (k, w) in terminal_wealth.iter_mut().enumerate() {
        let rec = &records[(k + 1) * path_len - step_len..(k + 1) * path_len];
        let y = paths.period(path_indices[k], n_rb - 1);
        *w = rec[0] * rec[step_len - na..].iter().zip(y).map(|(a, b)| a * b).sum::<f64>();
    }
    Ok(WealthTrajectoryBatch {
        path_indices: path_indices.to_vec(),
        terminal_wealth,
        records: Some(records),
        step_len,
        n_rebalance: n_rb,
    })
}

/// Terminal wealth only, without retaining records.
pub fn terminal_wealth(
    net: &PolicyNetwork,
    horizon: &InvestmentHorizon,
    paths: &ReturnPathSet,
    path_indices: &[usize],
    exec: Exec,
) -> Result<Vec<f64>> {
    horizon.check(net, paths, path_indices)?;
    let step_len = 1 + net.topology().record_len();
    let mut out = vec![0.0; path_indices.len()];
    let failed = std::sync::Mutex::new(None);
    exec.for_each_chunk_mut(&mut out, SHARD, |first, chunk| {
        let mut rec = vec![0.0; step_len * horizon.n_rebalance];
        for (k, w) in chunk.iter_mut().enumerate() {
            match roll_path(net, horizon, paths.path(path_indices[first + k]), &mut rec, step_len) {
                Ok(v) => *w = v,
                Err(e) => {
                    failed.lock().unwrap().get_or_insert(e);
                    return;
                }
            }
        }
    });
    match failed.into_inner().unwrap() {
        Some(e) => Err(e),
        None => Ok(out),
    }
}

/// Terminal wealth on every path of the set.
pub fn terminal_wealth_all(net: &PolicyNetwork, horizon: &InvestmentHorizon, paths: &ReturnPathSet, exec: Exec) -> Result<Vec<f64>> {
    let idx: Vec<usize> = (0..paths.n_paths()).collect();
    terminal_wealth(net, horizon, paths, &idx, exec)
}

/// Adjoint sweep: gradient of `sum_k d_terminal[k] * W_k(T)` with respect
/// to the network parameters, summed over the batch in fixed shard order.
pub fn backprop_through_time(
    net: &PolicyNetwork,
    paths: &ReturnPathSet,
    batch: &WealthTrajectoryBatch,
    d_terminal: &[f64],
    exec: Exec,
) -> Result<Gradient> {
    let records = batch.records.as_ref().ok_or(Error::ForwardNotRetained)?;
    if d_terminal.len() != batch.len() {
        return Err(Error::InvalidParameter(format!(
            "{} cotangents for a batch of {}",
            d_terminal.len(),
            batch.len()
        )));
    }
    if batch.step_len != 1 + net.topology().record_len() {
        return Err(Error::StaleCache("batch records do not match the policy topology".into()));
    }
    let na = net.n_assets();
    let n_rb = batch.n_rebalance;
    let step_len = batch.step_len;
    let path_len = n_rb * step_len;
    let n_params = net.theta().len();
    let n_shards = batch.len().div_ceil(SHARD);
    let parts = exec.map_indexed(n_shards, |s| {
        let mut grad = vec![0.0; n_params];
        let mut scratch = vec![0.0; net.scratch_len()];
        let mut d_p = vec![0.0; na];
        let end = ((s + 1) * SHARD).min(batch.len());
        for k in s * SHARD..end {
            let mut adj = d_terminal[k];
            if adj == 0.0 {
                continue;
            }
            let path = paths.path(batch.path_indices[k]);
            let recs = &records[k * path_len..(k + 1) * path_len];
            for m in (0..n_rb).rev() {
                let rec = &recs[m * step_len..(m + 1) * step_len];
                let wp = rec[0];
                let p = &rec[step_len - na..];
                let y = &path[m * na..(m + 1) * na];
                let mut growth = 0.0;
                for i in 0..na {
                    d_p[i] = wp * y[i] * adj;
                    growth += p[i] * y[i];
                }
                let d_wealth = net.backward_into(&rec[1..], &d_p, &mut grad, &mut scratch);
                adj = growth * adj + d_wealth;
            }
        }
        grad
    });
    Ok(Gradient { d_theta: pairwise_sum(parts, n_params) })
}
