//! Generalised Pareto fits and peaks-over-threshold tail risk.

use serde::{Deserialize, Serialize};

use super::{order_statistic, RiskConfig, RiskError};
use crate::optim::nelder_mead;
use crate::stats::{mean, sorted};

pub const MIN_EXCEEDANCES: usize = 30;
pub const MIN_EVT_LOSSES: usize = 100;
pub const XI_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpdFit {
    pub xi: f64,
    pub gamma: f64,
    pub threshold: f64,
    pub n_exceedances: usize,
    /// Fraction of the sample above the threshold.
    pub zeta: f64,
}

/// Keeps the shape away from zero, preserving its sign.
pub fn clamp_xi(xi: f64) -> f64 {
    if xi.abs() < XI_FLOOR {
        if xi < 0.0 {
            -XI_FLOOR
        } else {
            XI_FLOOR
        }
    } else {
        xi
    }
}

/// GPD log-likelihood of exceedances `y`; `-inf` outside the support.
pub fn gpd_loglik(y: &[f64], xi: f64, gamma: f64) -> f64 {
    if !(gamma > 0.0) || !xi.is_finite() {
        return f64::NEG_INFINITY;
    }
    let xi = clamp_xi(xi);
    let mut acc = 0.0;
    for &v in y {
        let z = xi * v / gamma;
        if z <= -1.0 {
            return f64::NEG_INFINITY;
        }
        acc += z.ln_1p();
    }
    -(y.len() as f64) * gamma.ln() - (1.0 + 1.0 / xi) * acc
}

/// Probability-weighted-moment estimates (Hosking and Wallis).
pub fn pwm_estimates(y: &[f64]) -> (f64, f64) {
    let s = sorted(y);
    let n = s.len() as f64;
    let a0 = mean(&s);
    let a1 = s.iter().enumerate().map(|(i, x)| (1.0 - (i as f64 + 1.0 - 0.35) / n) * x).sum::<f64>() / n;
    let d = a0 - 2.0 * a1;
    if d <= 0.0 {
        return (0.1, a0.max(1e-12));
    }
    (2.0 - a0 / d, 2.0 * a0 * a1 / d)
}

/// Maximum-likelihood GPD fit by Nelder-Mead over `(xi, ln gamma)`, started
/// from the PWM estimates (nudged into the support if needed).
pub fn fit_gpd(exceedances: &[f64]) -> Result<GpdFit, RiskError> {
    if exceedances.len() < MIN_EXCEEDANCES {
        return Err(RiskError::InsufficientExceedances { need: MIN_EXCEEDANCES, got: exceedances.len() });
    }
    let (mut xi0, mut g0) = pwm_estimates(exceedances);
    if !(g0 > 0.0 && g0.is_finite()) {
        g0 = mean(exceedances).max(1e-12);
    }
    let ymax = exceedances.iter().copied().fold(0.0, f64::max);
    if !gpd_loglik(exceedances, xi0, g0).is_finite() {
        // a negative shape must satisfy gamma > -xi * max(y)
        xi0 = (-0.9 * g0 / ymax).max(-0.5);
    }
    let nll = |p: &[f64]| -gpd_loglik(exceedances, p[0], p[1].exp());
    let (best, _) = nelder_mead(nll, &[xi0, g0.ln()], &[0.1, 0.2], 4000, 1e-13);
    Ok(GpdFit {
        xi: clamp_xi(best[0]),
        gamma: best[1].exp(),
        threshold: 0.0,
        n_exceedances: exceedances.len(),
        zeta: 1.0,
    })
}

/// Tail estimates from a peaks-over-threshold GPD fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvtEstimate {
    pub evt_var: f64,
    /// Absent when `xi >= 1` (infinite mean excess).
    pub evt_cvar: Option<f64>,
    pub fit: GpdFit,
}

pub fn evt_tail_risk(losses: &[f64], config: &RiskConfig) -> Result<EvtEstimate, RiskError> {
    config.validate()?;
    if losses.len() < MIN_EVT_LOSSES {
        return Err(RiskError::TooFewLosses { need: MIN_EVT_LOSSES, got: losses.len() });
    }
    if config.alpha < config.u_q {
        return Err(RiskError::ParameterOrder { alpha: config.alpha, u_q: config.u_q });
    }
    let s = sorted(losses);
    let u = order_statistic(&s, config.u_q);
    let y: Vec<f64> = s.iter().filter(|&&l| l > u).map(|l| l - u).collect();
    let mut fit = fit_gpd(&y)?;
    fit.threshold = u;
    fit.zeta = y.len() as f64 / s.len() as f64;
    let (xi, g) = (fit.xi, fit.gamma);
    let evt_var = u + (g / xi) * (((1.0 - config.alpha) / fit.zeta).powf(-xi) - 1.0);
    let evt_cvar = (xi < 1.0).then(|| (evt_var + g - xi * u) / (1.0 - xi));
    Ok(EvtEstimate { evt_var, evt_cvar, fit })
}
