//! Ground-truth validators and distribution summaries.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::market::{kou_jump_moments, MarketModel, PeriodSampler};
use crate::rng;

/// Inputs of the continuous-rebalancing quadratic-target control for one
/// risk-free and one jump-diffusion asset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClosedFormDsqParams {
    pub r: f64,
    pub mu2: f64,
    pub sigma2: f64,
    pub lambda2: f64,
    pub kappa2_second: f64,
    pub gamma: f64,
    pub maturity: f64,
    pub w0: f64,
}

impl ClosedFormDsqParams {
    /// Reads `r` from the risk-free asset and the risky moments from the
    /// other asset of a two-asset model.
    pub fn from_model(model: &MarketModel, gamma: f64, maturity: f64, w0: f64) -> Result<Self> {
        let (rf, risky) = split_model(model)?;
        let a = &model.assets[risky];
        let (_, k2) = kou_jump_moments(a)?;
        let p = Self {
            r: model.assets[rf].mu,
            mu2: a.mu,
            sigma2: a.sigma,
            lambda2: a.jump_intensity,
            kappa2_second: k2,
            gamma,
            maturity,
            w0,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma2 * self.sigma2 + self.lambda2 * self.kappa2_second > 0.0) {
            return Err(Error::InvalidParameter("risky asset has no variance".into()));
        }
        if !(self.maturity > 0.0 && self.w0 > 0.0 && self.gamma > 0.0) {
            return Err(Error::InvalidParameter("maturity, w0 and gamma must be positive".into()));
        }
        Ok(())
    }

    /// `(mu2 - r) / (sigma2^2 + lambda2 kappa2)`.
    pub fn merton_ratio(&self) -> f64 {
        (self.mu2 - self.r) / (self.sigma2 * self.sigma2 + self.lambda2 * self.kappa2_second)
    }

    fn discounted_target(&self, t: f64) -> f64 {
        self.gamma * (-self.r * (self.maturity - t)).exp()
    }
}

fn split_model(model: &MarketModel) -> Result<(usize, usize)> {
    model.validate()?;
    if model.n_assets() != 2 || model.risk_free.iter().filter(|f| **f).count() != 1 {
        return Err(Error::InvalidParameter(
            "closed-form control needs exactly one risk-free and one risky asset".into(),
        ));
    }
    Ok(if model.risk_free[0] { (0, 1) } else { (1, 0) })
}

/// Fraction of wealth in the risky asset under the unconstrained optimal
/// quadratic-target control. Not clipped to `[0, 1]`.
pub fn dsq_closed_form_weight(p: &ClosedFormDsqParams, t: f64, wealth: f64) -> Result<f64> {
    if !(wealth > 0.0) {
        return Err(Error::Insolvent(wealth));
    }
    Ok(p.merton_ratio() * (p.discounted_target(t) - wealth) / wealth)
}

/// Terminal wealth under the closed-form control applied at `n_steps`
/// uniform times over finely sampled returns. Leverage, shorting and
/// negative wealth are allowed.
pub fn simulate_closed_form_dsq(
    p: &ClosedFormDsqParams,
    model: &MarketModel,
    n_paths: usize,
    n_steps: usize,
    seed: u64,
    exec: Exec,
) -> Result<Vec<f64>> {
    p.validate()?;
    let (rf, risky) = split_model(model)?;
    if n_steps == 0 || n_paths == 0 {
        return Err(Error::InvalidParameter("n_paths and n_steps must be positive".into()));
    }
    let dt = p.maturity / n_steps as f64;
    let sampler = PeriodSampler::new(model, dt)?;
    let ratio = p.merton_ratio();
    let mut out = vec![0.0; n_paths];
    exec.for_each_chunk_mut(&mut out, 256, |first, chunk| {
        let mut z = [0.0; 2];
        let mut y = [0.0; 2];
        for (k, w_out) in chunk.iter_mut().enumerate() {
            let mut rng = rng::stream(seed, (first + k) as u64);
            let mut w = p.w0;
            for s in 0..n_steps {
                let t = s as f64 * dt;
                // risky holding in currency units: ratio * (target PV - W)
                let risky_amount = ratio * (p.discounted_target(t) - w);
                sampler.sample(&mut rng, &mut z, &mut y);
                w = (w - risky_amount) * y[rf] + risky_amount * y[risky];
            }
            *w_out = w;
        }
    });
    Ok(out)
}

/// Target wealth of the quadratic problem whose optimal control coincides
/// with the mean-variance control at risk aversion `rho`.
pub fn embedding_gamma(rho: f64, mean_wt_star: f64) -> Result<f64> {
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(Error::InvalidScalarization(rho));
    }
    Ok(1.0 / (2.0 * rho) + mean_wt_star)
}

pub const PERCENTILE_PROBES: [u32; 7] = [5, 20, 25, 50, 75, 80, 95];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionSummary {
    pub mean: f64,
    pub stdev: f64,
    /// `(probe, value)` pairs at [`PERCENTILE_PROBES`].
    pub percentiles: Vec<(u32, f64)>,
}

impl DistributionSummary {
    pub fn percentile(&self, probe: u32) -> Option<f64> {
        self.percentiles.iter().find(|(p, _)| *p == probe).map(|(_, v)| *v)
    }

    pub const CSV_HEADER: &'static str = "label,mean,stdev,p5,p20,p25,p50,p75,p80,p95";

    pub fn csv_row(&self, label: &str) -> String {
        let mut s = format!("{label},{},{}", self.mean, self.stdev);
        for (_, v) in &self.percentiles {
            s.push_str(&format!(",{v}"));
        }
        s
    }

    pub fn write_csv<W: Write>(rows: &[(String, DistributionSummary)], mut out: W) -> Result<()> {
        writeln!(out, "{}", Self::CSV_HEADER)?;
        for (label, s) in rows {
            writeln!(out, "{}", s.csv_row(label))?;
        }
        Ok(())
    }
}

/// Linear interpolation between order statistics at rank `q (n - 1)`.
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Mean, population standard deviation and interpolated percentiles.
pub fn summarize(terminal_wealth: &[f64]) -> Result<DistributionSummary> {
    if terminal_wealth.is_empty() {
        return Err(Error::NoPaths);
    }
    let n = terminal_wealth.len() as f64;
    let mean = terminal_wealth.iter().sum::<f64>() / n;
    let var = terminal_wealth.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / n;
    let mut sorted = terminal_wealth.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let percentiles = PERCENTILE_PROBES
        .iter()
        .map(|&p| (p, percentile_sorted(&sorted, p as f64 / 100.0)))
        .collect();
    Ok(DistributionSummary { mean, stdev: var.sqrt(), percentiles })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::KouAssetParams;

    fn vwd() -> KouAssetParams {
        KouAssetParams {
            mu: 0.0877,
            sigma: 0.1459,
            jump_intensity: 0.3191,
            up_prob: 0.2333,
            zeta1: 4.3608,
            zeta2: 5.504,
        }
    }

    fn dsq_model() -> MarketModel {
        MarketModel::independent(vec![KouAssetParams::risk_free(0.0043), vwd()]).with_risk_free(0)
    }

    #[test]
    fn weight_vanishes_at_reachable_target() {
        let p = ClosedFormDsqParams::from_model(&dsq_model(), 138.33, 1.0, 100.0).unwrap();
        let t = 0.4;
        let w = 138.33 * (-0.0043f64 * 0.6).exp();
        assert!(dsq_closed_form_weight(&p, t, w).unwrap().abs() < 1e-14);
        assert!(matches!(dsq_closed_form_weight(&p, t, 0.0), Err(Error::Insolvent(_))));
    }

    #[test]
    fn weight_at_maturity_half_target() {
        let p = ClosedFormDsqParams { r: 0.0, ..ClosedFormDsqParams::from_model(&dsq_model(), 10.0, 1.0, 1.0).unwrap() };
        let w = dsq_closed_form_weight(&p, 1.0, 5.0).unwrap();
        assert!((w - p.merton_ratio()).abs() < 1e-14);
    }

    #[test]
    fn reference_setup_weight_at_origin() {
        let p = ClosedFormDsqParams::from_model(&dsq_model(), 138.33, 1.0, 100.0).unwrap();
        // kappa2 = 0.090227132662363 from quadrature
        let ratio = (0.0877 - 0.0043) / (0.1459f64.powi(2) + 0.3191 * 0.090_227_132_662_363);
        let expect = ratio * (138.33 * (-0.0043f64).exp() - 100.0) / 100.0;
        let got = dsq_closed_form_weight(&p, 0.0, 100.0).unwrap();
        assert!((got - expect).abs() < 1e-12);
        assert!((got - 0.628_460_101_838_5).abs() < 1e-9, "{got}");
    }

    #[test]
    fn weight_decreasing_in_wealth() {
        let p = ClosedFormDsqParams::from_model(&dsq_model(), 138.33, 1.0, 100.0).unwrap();
        let mut prev = f64::INFINITY;
        for k in 1..100 {
            let w = k as f64 * 1.3;
            let v = dsq_closed_form_weight(&p, 0.3, w).unwrap();
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn no_premium_means_risk_free_growth() {
        let mut m = dsq_model();
        m.assets[1].mu = 0.0043;
        let p = ClosedFormDsqParams::from_model(&m, 138.33, 1.0, 100.0).unwrap();
        let w = simulate_closed_form_dsq(&p, &m, 100, 50, 1, Exec::Sequential).unwrap();
        let expect = 100.0 * (0.0043f64).exp();
        assert!(w.iter().all(|v| (v - expect).abs() < 1e-10));
    }

    #[test]
    fn huge_volatility_barely_invests() {
        let mut m = dsq_model();
        m.assets[1].sigma = 10.0;
        let p = ClosedFormDsqParams::from_model(&m, 138.33, 1.0, 100.0).unwrap();
        let w = simulate_closed_form_dsq(&p, &m, 2000, 100, 2, Exec::Parallel).unwrap();
        let s = summarize(&w).unwrap();
        let rf = 100.0 * (0.0043f64).exp();
        assert!((s.mean - rf).abs() < 0.1, "{}", s.mean);
        assert!(s.stdev < 1.0, "{}", s.stdev);
    }

    #[test]
    fn embedding_values() {
        assert_eq!(embedding_gamma(0.5, 0.0).unwrap(), 1.0);
        let g = embedding_gamma(0.017, 400.2).unwrap();
        assert!((429.5..=429.8).contains(&g), "{g}");
        let g = embedding_gamma(0.0097, 441.5).unwrap();
        assert!((g - 493.196).abs() < 0.3, "{g}");
        assert!(matches!(embedding_gamma(0.0, 1.0), Err(Error::InvalidScalarization(_))));
    }

    #[test]
    fn summary_basics() {
        let s = summarize(&[4.2; 10]).unwrap();
        assert!((s.mean - 4.2).abs() < 1e-12);
        assert!(s.stdev < 1e-12);
        assert!(s.percentiles.iter().all(|(_, v)| *v == 4.2));
        let w: Vec<f64> = (1..=100).map(f64::from).collect();
        let s = summarize(&w).unwrap();
        assert_eq!(s.percentile(50), Some(50.5));
        assert!(s.csv_row("x").starts_with("x,50.5,"));
    }
}
