//! Objective family on terminal wealth, stored as minimization problems,
//! with sample-average estimators and exact per-path cotangents.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectiveKind {
    /// Quadratic target `E[(W - gamma)^2]`.
    Dsq,
    /// One-sided quadratic `E[min(W - gamma, 0)^2 - eps W]`.
    Osq,
    /// Mean-variance `-(E[W] - rho Var[W])`.
    Mv,
    /// Mean-CVaR in Rockafellar-Uryasev form with auxiliary `xi`.
    Mcv,
    /// Mean-semivariance `-(E[W] - rho E[min(W - E[W], 0)^2])`.
    Msemiv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveSpec {
    pub kind: ObjectiveKind,
    #[serde(default)]
    pub gamma: f64,
    #[serde(default)]
    pub rho: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Half-width of the quadratic patch replacing `max(x, 0)`; zero uses
    /// the exact kink.
    #[serde(default = "default_lambda_smooth")]
    pub lambda_smooth: f64,
}

fn default_alpha() -> f64 {
    0.05
}
fn default_epsilon() -> f64 {
    1e-6
}
fn default_lambda_smooth() -> f64 {
    1e-3
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveValue {
    pub value: f64,
    pub mean_wt: f64,
    pub auxiliary: Option<f64>,
}

impl ObjectiveSpec {
    fn base(kind: ObjectiveKind) -> Self {
        Self {
            kind,
            gamma: 0.0,
            rho: 0.0,
            alpha: default_alpha(),
            epsilon: default_epsilon(),
            lambda_smooth: default_lambda_smooth(),
        }
    }

    pub fn dsq(gamma: f64) -> Self {
        Self { gamma, ..Self::base(ObjectiveKind::Dsq) }
    }

    pub fn osq(gamma: f64) -> Self {
        Self { gamma, ..Self::base(ObjectiveKind::Osq) }
    }

    pub fn mv(rho: f64) -> Self {
        Self { rho, ..Self::base(ObjectiveKind::Mv) }
    }

    pub fn mcv(rho: f64, alpha: f64) -> Self {
        Self { rho, alpha, ..Self::base(ObjectiveKind::Mcv) }
    }

    pub fn msemiv(rho: f64) -> Self {
        Self { rho, ..Self::base(ObjectiveKind::Msemiv) }
    }

    pub fn has_xi(&self) -> bool {
        self.kind == ObjectiveKind::Mcv
    }

    pub fn validate(&self) -> Result<()> {
        use ObjectiveKind::*;
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        match self.kind {
            Dsq | Osq if !(self.gamma > 0.0 && self.gamma.is_finite()) => bad("gamma must be positive"),
            Osq if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) => bad("epsilon must be non-negative"),
            Mv | Mcv | Msemiv if !(self.rho > 0.0 && self.rho.is_finite()) => bad("rho must be positive"),
            Mcv if !(self.alpha > 0.0 && self.alpha < 1.0) => bad("alpha must lie in (0, 1)"),
            Mcv if !(self.lambda_smooth >= 0.0 && self.lambda_smooth.is_finite()) => {
                bad("lambda_smooth must be non-negative")
            }
            _ => Ok(()),
        }
    }

    /// Sample estimate of the objective; batch means inside the risk terms
    /// are taken over `terminal_wealth` itself.
    pub fn evaluate(&self, terminal_wealth: &[f64], xi: f64) -> Result<ObjectiveValue> {
        let n = terminal_wealth.len();
        if n == 0 {
            return Err(Error::NoPaths);
        }
        let nf = n as f64;
        let mean = terminal_wealth.iter().sum::<f64>() / nf;
        let avg = |f: &dyn Fn(f64) -> f64| terminal_wealth.iter().map(|&w| f(w)).sum::<f64>() / nf;
        let (value, auxiliary) = match self.kind {
            ObjectiveKind::Dsq => (avg(&|w| (w - self.gamma).powi(2)), None),
            ObjectiveKind::Osq => (avg(&|w| (w - self.gamma).min(0.0).powi(2) - self.epsilon * w), None),
            ObjectiveKind::Mv => (-mean + self.rho * avg(&|w| (w - mean).powi(2)), None),
            ObjectiveKind::Msemiv => (-mean + self.rho * avg(&|w| (w - mean).min(0.0).powi(2)), None),
            ObjectiveKind::Mcv => {
                let lam = self.lambda_smooth;
                let a = self.alpha;
                (avg(&|w| -self.rho * w - xi + smooth_max(xi - w, lam) / a), Some(xi))
            }
        };
        Ok(ObjectiveValue { value, mean_wt: mean, auxiliary })
    }

    /// Gradient of [`evaluate`](Self::evaluate) with respect to each terminal
    /// wealth and to `xi`.
    pub fn cotangents(&self, terminal_wealth: &[f64], xi: f64) -> Result<(Vec<f64>, f64)> {
        let n = terminal_wealth.len();
        if n == 0 {
            return Err(Error::NoPaths);
        }
        let nf = n as f64;
        let mean = terminal_wealth.iter().sum::<f64>() / nf;
        let mut d_xi = 0.0;
        let d: Vec<f64> = match self.kind {
            ObjectiveKind::Dsq => terminal_wealth.iter().map(|w| 2.0 * (w - self.gamma) / nf).collect(),
            ObjectiveKind::Osq => terminal_wealth
                .iter()
                .map(|w| (2.0 * (w - self.gamma).min(0.0) - self.epsilon) / nf)
                .collect(),
            // the coupling term through the mean vanishes since sum(W - mean) = 0
            ObjectiveKind::Mv => terminal_wealth
                .iter()
                .map(|w| (-1.0 + 2.0 * self.rho * (w - mean)) / nf)
                .collect(),
            ObjectiveKind::Msemiv => {
                let mean_down = terminal_wealth.iter().map(|w| (w - mean).min(0.0)).sum::<f64>() / nf;
                terminal_wealth
                    .iter()
                    .map(|w| (-1.0 + 2.0 * self.rho * ((w - mean).min(0.0) - mean_down)) / nf)
                    .collect()
            }
            ObjectiveKind::Mcv => {
                let lam = self.lambda_smooth;
                let mut slope_sum = 0.0;
                let d = terminal_wealth
                    .iter()
                    .map(|w| {
                        let s = smooth_max_slope(xi - w, lam);
                        slope_sum += s;
                        (-self.rho - s / self.alpha) / nf
                    })
                    .collect();
                d_xi = -1.0 + slope_sum / (self.alpha * nf);
                d
            }
        };
        Ok((d, d_xi))
    }
}

/// `C^1` approximation of `max(x, 0)`: quadratic on `|x| <= lambda`, exact
/// outside. `lambda = 0` gives the exact maximum.
#[inline]
pub fn smooth_max(x: f64, lambda: f64) -> f64 {
    if x > lambda {
        x
    } else if x < -lambda || lambda == 0.0 {
        x.max(0.0)
    } else {
        x * x / (4.0 * lambda) + 0.5 * x + 0.25 * lambda
    }
}

/// Derivative of [`smooth_max`]; for `lambda = 0` the kink takes slope 0.
#[inline]
pub fn smooth_max_slope(x: f64, lambda: f64) -> f64 {
    if x > lambda {
        1.0
    } else if x < -lambda || lambda == 0.0 {
        0.0
    } else {
        x / (2.0 * lambda) + 0.5
    }
}

/// Lower-tail statistics of wealth: `var` is the `ceil(alpha n)`-th smallest
/// value and `cvar` the mean of the `ceil(alpha n)` smallest values.
pub fn empirical_cvar(terminal_wealth: &[f64], alpha: f64) -> Result<(f64, f64)> {
    if terminal_wealth.is_empty() {
        return Err(Error::NoPaths);
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let n = terminal_wealth.len();
    // guard against alpha * n landing a hair above an integer
    let k = (((alpha * n as f64) - 1e-9).ceil() as usize).clamp(1, n);
    let mut sorted = terminal_wealth.to_vec();
    sorted.select_nth_unstable_by(k - 1, f64::total_cmp);
    let var = sorted[k - 1];
    let tail = &sorted[..k];
    let cvar = tail.iter().sum::<f64>() / k as f64;
    Ok((cvar, var))
}

/// Mean-CVaR reward `rho * mean + CVaR_alpha` (larger is better).
pub fn mean_cvar_value(terminal_wealth: &[f64], rho: f64, alpha: f64) -> Result<f64> {
    let (cvar, _) = empirical_cvar(terminal_wealth, alpha)?;
    let mean = terminal_wealth.iter().sum::<f64>() / terminal_wealth.len() as f64;
    Ok(rho * mean + cvar)
}
