use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use super::kou::KouAssetParams;
use super::paths::{Provenance, ReturnPathSet};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::rng;

const PSD_TOL: f64 = 1e-10;

/// Joint dynamics of `N_a` assets: Kou jump diffusions with correlated
/// Brownian drivers and mutually independent jump processes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketModel {
    pub assets: Vec<KouAssetParams>,
    pub brownian_corr: Vec<Vec<f64>>,
    pub risk_free: Vec<bool>,
    #[serde(default)]
    pub labels: Vec<String>,
}

impl MarketModel {
    /// Uncorrelated model with no risk-free flags.
    pub fn independent(assets: Vec<KouAssetParams>) -> Self {
        let n = assets.len();
        let corr = (0..n)
            .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        Self {
            risk_free: vec![false; n],
            labels: (1..=n).map(|i| format!("asset{i}")).collect(),
            assets,
            brownian_corr: corr,
        }
    }

    pub fn with_correlation(mut self, i: usize, j: usize, rho: f64) -> Self {
        self.brownian_corr[i][j] = rho;
        self.brownian_corr[j][i] = rho;
        self
    }

    pub fn with_risk_free(mut self, i: usize) -> Self {
        self.risk_free[i] = true;
        self.assets[i].sigma = 0.0;
        self.assets[i].jump_intensity = 0.0;
        self
    }

    pub fn with_labels(mut self, labels: &[&str]) -> Self {
        self.labels = labels.iter().map(|s| s.to_string()).collect();
        self
    }

    pub fn n_assets(&self) -> usize {
        self.assets.len()
    }

    pub fn labels(&self) -> Vec<String> {
        if self.labels.len() == self.assets.len() {
            self.labels.clone()
        } else {
            (1..=self.assets.len()).map(|i| format!("asset{i}")).collect()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.assets.len();
        if n == 0 {
            return Err(Error::InvalidParameter("market has no assets".into()));
        }
        if self.risk_free.len() != n {
            return Err(Error::InvalidParameter("risk_free flags length mismatch".into()));
        }
        for (i, a) in self.assets.iter().enumerate() {
            a.validate()?;
            if self.risk_free[i] && (a.sigma != 0.0 || a.jump_intensity != 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "risk-free asset {i} must have sigma = lambda = 0"
                )));
            }
        }
        self.correlation_factor().map(|_| ())
    }

    /// Symmetric square root `L = V diag(sqrt(l)) V^T` of the correlation
    /// matrix, so that `L z` has covariance `C` for standard normal `z`.
    pub fn correlation_factor(&self) -> Result<DMatrix<f64>> {
        let n = self.assets.len();
        if self.brownian_corr.len() != n || self.brownian_corr.iter().any(|r| r.len() != n) {
            return Err(Error::CorrelationNotFactorizable("matrix shape does not match asset count".into()));
        }
        let c = DMatrix::from_fn(n, n, |i, j| self.brownian_corr[i][j]);
        for i in 0..n {
            if (c[(i, i)] - 1.0).abs() > 1e-12 {
                return Err(Error::CorrelationNotFactorizable(format!("diagonal entry {i} is not 1")));
            }
            for j in 0..i {
                if (c[(i, j)] - c[(j, i)]).abs() > 1e-12 || !c[(i, j)].is_finite() {
                    return Err(Error::CorrelationNotFactorizable(format!("entry ({i},{j}) not symmetric")));
                }
            }
        }
        let eig = SymmetricEigen::new(c);
        if let Some(min) = eig.eigenvalues.iter().cloned().reduce(f64::min) {
            if min < -PSD_TOL {
                return Err(Error::CorrelationNotFactorizable(format!("negative eigenvalue {min:e}")));
            }
        }
        let sqrt_l = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
        let v = &eig.eigenvectors;
        Ok(v * DMatrix::from_diagonal(&sqrt_l) * v.transpose())
    }
}

/// Per-period sampler for a validated model and fixed period length.
pub(crate) struct PeriodSampler {
    n: usize,
    factor: Vec<f64>,
    drift: Vec<f64>,
    vol: Vec<f64>,
    deterministic: Vec<Option<f64>>,
    jumps: Vec<Option<Poisson<f64>>>,
    assets: Vec<KouAssetParams>,
}

impl PeriodSampler {
    pub(crate) fn new(model: &MarketModel, dt: f64) -> Result<Self> {
        model.validate()?;
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
        }
        let n = model.n_assets();
        let l = model.correlation_factor()?;
        let mut factor = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                factor[i * n + j] = l[(i, j)];
            }
        }
        let mut drift = Vec::with_capacity(n);
        let mut vol = Vec::with_capacity(n);
        let mut deterministic = Vec::with_capacity(n);
        let mut jumps = Vec::with_capacity(n);
        for (i, a) in model.assets.iter().enumerate() {
            let jump_free = a.jump_intensity == 0.0;
            drift.push((a.mu - a.jump_intensity * a.kappa1() - 0.5 * a.sigma * a.sigma) * dt);
            vol.push(a.sigma * dt.sqrt());
            deterministic.push(if model.risk_free[i] || (jump_free && a.sigma == 0.0) {
                Some((a.mu * dt).exp())
            } else {
                None
            });
            jumps.push(if jump_free {
                None
            } else {
                Some(Poisson::new(a.jump_intensity * dt).map_err(|e| Error::InvalidParameter(e.to_string()))?)
            });
        }
        Ok(Self { n, factor, drift, vol, deterministic, jumps, assets: model.assets.clone() })
    }

    /// Fills `out` with one period of gross returns. `z` is scratch of length `n`.
    #[inline]
    pub(crate) fn sample<R: Rng + ?Sized>(&self, rng: &mut R, z: &mut [f64], out: &mut [f64]) {
        let n = self.n;
        for zi in z.iter_mut() {
            *zi = StandardNormal.sample(rng);
        }
        for i in 0..n {
            if let Some(g) = self.deterministic[i] {
                out[i] = g;
                continue;
            }
            let row = &self.factor[i * n..(i + 1) * n];
            let e: f64 = row.iter().zip(z.iter()).map(|(a, b)| a * b).sum();
            let mut log_y = self.drift[i] + self.vol[i] * e;
            if let Some(pois) = &self.jumps[i] {
                let k = pois.sample(rng) as u64;
                for _ in 0..k {
                    log_y += self.assets[i].sample_log_jump(rng);
                }
            }
            out[i] = log_y.exp();
        }
    }
}

/// Samples `n_paths` independent paths of `n_periods` gross returns from the
/// exact solution of the jump diffusion over each period of length `dt`.
///
/// Path `j` draws only from stream `j` of `seed`, so the result does not
/// depend on the execution mode.
pub fn simulate_paths(
    model: &MarketModel,
    n_paths: usize,
    n_periods: usize,
    dt: f64,
    seed: u64,
    exec: Exec,
) -> Result<ReturnPathSet> {
    if n_paths == 0 || n_periods == 0 {
        return Err(Error::InvalidParameter("n_paths and N_rb must be at least 1".into()));
    }
    let sampler = PeriodSampler::new(model, dt)?;
    let na = model.n_assets();
    let stride = n_periods * na;
    let mut data = vec![0.0; n_paths * stride];
    exec.for_each_chunk_mut(&mut data, stride * 256, |offset, chunk| {
        let first = offset / stride;
        let mut z = vec![0.0; na];
        for (k, path) in chunk.chunks_mut(stride).enumerate() {
            let mut rng = rng::stream(seed, (first + k) as u64);
            for period in path.chunks_mut(na) {
                sampler.sample(&mut rng, &mut z, period);
            }
        }
    });
    ReturnPathSet::new(data, n_paths, n_periods, na, dt, model.labels(), Provenance::Simulated)
}
