//! Model-informed market risk: Monte Carlo VaR/CVaR, drawdown, standardised
//! residuals and EVT tail estimates on simulated losses and residuals.
//!
//! Losses are `S_0 - S_H`, positive when the price falls.

mod gpd;

pub use gpd::{
    clamp_xi, evt_tail_risk, fit_gpd, gpd_loglik, pwm_estimates, EvtEstimate, GpdFit, MIN_EVT_LOSSES, MIN_EXCEEDANCES,
    XI_FLOOR,
};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::PricePath;
use crate::dsl::SdeModel;
use crate::eval::{eval_term, EvalError};
use crate::params::ParamVector;
use crate::sim::{simulate, SimConfig, SimError, TRADING_DT};
use crate::stats::{mean, sample_std, sorted};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RiskError {
    #[error("empty loss sample")]
    Empty,
    #[error("alpha must lie in (0, 1), got {0}")]
    BadAlpha(f64),
    #[error("invalid risk config: {0}")]
    InvalidConfig(String),
    #[error("drawdown needs positive prices, found {value} at index {index}")]
    NonPositivePrice { index: usize, value: f64 },
    #[error("path too short: need {need}, got {got}")]
    TooShort { need: usize, got: usize },
    #[error("diffusion is zero at index {index}; residuals undefined")]
    DegenerateDiffusion { index: usize },
    #[error("model has no diffusion term; residuals undefined")]
    NoDiffusion,
    #[error("need at least {need} exceedances, got {got}")]
    InsufficientExceedances { need: usize, got: usize },
    #[error("need at least {need} losses for EVT, got {got}")]
    TooFewLosses { need: usize, got: usize },
    #[error("EVT alpha {alpha} must not be below threshold quantile {u_q}")]
    ParameterOrder { alpha: f64, u_q: f64 },
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RiskConfig {
    pub alpha: f64,
    pub horizon: usize,
    pub u_q: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub dt: f64,
}

impl Default for RiskConfig {
    fn default() -> Self {
        Self { alpha: 0.95, horizon: 20, u_q: 0.95, n_paths: 10_000, seed: 0, dt: TRADING_DT }
    }
}

impl RiskConfig {
    pub fn validate(&self) -> Result<(), RiskError> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(RiskError::BadAlpha(self.alpha));
        }
        if !(self.u_q > 0.0 && self.u_q < 1.0) {
            return Err(RiskError::InvalidConfig(format!("u_q must lie in (0, 1), got {}", self.u_q)));
        }
        if self.horizon == 0 || self.n_paths == 0 {
            return Err(RiskError::InvalidConfig("horizon and n_paths must be positive".into()));
        }
        Ok(())
    }
}

/// Smallest sorted value whose empirical CDF reaches `alpha`.
pub(crate) fn order_statistic(sorted: &[f64], alpha: f64) -> f64 {
    let n = sorted.len();
    let k = (0..n).find(|&i| (i + 1) as f64 / n as f64 >= alpha).unwrap_or(n - 1);
    sorted[k]
}

/// Empirical VaR and CVaR. CVaR averages losses strictly above VaR and
/// falls back to VaR when there are none.
pub fn var_cvar(losses: &[f64], alpha: f64) -> Result<(f64, f64), RiskError> {
    if losses.is_empty() {
        return Err(RiskError::Empty);
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(RiskError::BadAlpha(alpha));
    }
    let s = sorted(losses);
    let var = order_statistic(&s, alpha);
    let tail: Vec<f64> = s.iter().copied().filter(|&l| l > var).collect();
    let cvar = if tail.is_empty() { var } else { mean(&tail) };
    Ok((var, cvar))
}

/// Largest peak-to-trough decline as a fraction of the running peak.
pub fn max_drawdown(path: &[f64]) -> Result<f64, RiskError> {
    if path.len() < 2 {
        return Err(RiskError::TooShort { need: 2, got: path.len() });
    }
    if let Some((index, &value)) = path.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        return Err(RiskError::NonPositivePrice { index, value });
    }
    let mut peak = path[0];
    let mut mdd = 0.0f64;
    for &v in path {
        peak = peak.max(v);
        mdd = mdd.max((peak - v) / peak);
    }
    Ok(mdd)
}

/// `(S_{k+1} - S_k - f dt) / (g sqrt(dt))` for each consecutive pair, with
/// time `t_k = k dt` from the start of the path.
pub fn standardized_residuals(
    historical: &[f64],
    model: &SdeModel,
    params: &ParamVector,
    dt: f64,
) -> Result<Vec<f64>, RiskError> {
    if historical.len() < 3 {
        return Err(RiskError::TooShort { need: 3, got: historical.len() });
    }
    let g_expr = model.diffusion.as_ref().ok_or(RiskError::NoDiffusion)?;
    historical
        .windows(2)
        .enumerate()
        .map(|(k, w)| {
            let t = k as f64 * dt;
            let f = eval_term(&model.drift, params, w[0], t)?;
            let g = eval_term(g_expr, params, w[0], t)?;
            if g == 0.0 {
                return Err(RiskError::DegenerateDiffusion { index: k });
            }
            Ok((w[1] - w[0] - f * dt) / (g * dt.sqrt()))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiskReport {
    pub var: f64,
    pub cvar: f64,
    /// Mean of the per-path drawdowns in `mdd_paths`.
    pub mdd: f64,
    pub evt_var: Option<f64>,
    pub evt_cvar: Option<f64>,
    pub loss_gpd: Option<GpdFit>,
    pub residual_gpd: Option<GpdFit>,
    pub residual_mean: Option<f64>,
    pub residual_std: Option<f64>,
    pub last_residual: Option<f64>,
    pub mdd_paths: Vec<f64>,
}

/// Flat JSON shape shared with the trader prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FlatRiskReport {
    var: f64,
    cvar: f64,
    mdd: f64,
    evt_var: Option<f64>,
    evt_cvar: Option<f64>,
    loss_xi: Option<f64>,
    loss_gamma: Option<f64>,
    loss_threshold: Option<f64>,
    loss_n_exceedances: Option<usize>,
    loss_zeta: Option<f64>,
    residual_xi: Option<f64>,
    residual_gamma: Option<f64>,
    residual_threshold: Option<f64>,
    residual_n_exceedances: Option<usize>,
    residual_zeta: Option<f64>,
    residual_mean: Option<f64>,
    residual_std: Option<f64>,
    last_residual: Option<f64>,
}

impl Serialize for RiskReport {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let (l, r) = (self.loss_gpd, self.residual_gpd);
        FlatRiskReport {
            var: self.var,
            cvar: self.cvar,
            mdd: self.mdd,
            evt_var: self.evt_var,
            evt_cvar: self.evt_cvar,
            loss_xi: l.map(|g| g.xi),
            loss_gamma: l.map(|g| g.gamma),
            loss_threshold: l.map(|g| g.threshold),
            loss_n_exceedances: l.map(|g| g.n_exceedances),
            loss_zeta: l.map(|g| g.zeta),
            residual_xi: r.map(|g| g.xi),
            residual_gamma: r.map(|g| g.gamma),
            residual_threshold: r.map(|g| g.threshold),
            residual_n_exceedances: r.map(|g| g.n_exceedances),
            residual_zeta: r.map(|g| g.zeta),
            residual_mean: self.residual_mean,
            residual_std: self.residual_std,
            last_residual: self.last_residual,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for RiskReport {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let f = FlatRiskReport::deserialize(d)?;
        let fit = |xi: Option<f64>, gamma, threshold, n, zeta| {
            Some(GpdFit { xi: xi?, gamma: gamma?, threshold: threshold?, n_exceedances: n?, zeta: zeta? })
        };
        Ok(RiskReport {
            var: f.var,
            cvar: f.cvar,
            mdd: f.mdd,
            evt_var: f.evt_var,
            evt_cvar: f.evt_cvar,
            loss_gpd: fit(f.loss_xi, f.loss_gamma, f.loss_threshold, f.loss_n_exceedances, f.loss_zeta),
            residual_gpd: fit(
                f.residual_xi,
                f.residual_gamma,
                f.residual_threshold,
                f.residual_n_exceedances,
                f.residual_zeta,
            ),
            residual_mean: f.residual_mean,
            residual_std: f.residual_std,
            last_residual: f.last_residual,
            mdd_paths: Vec::new(),
        })
    }
}

/// Simulates `config.n_paths` paths over the horizon from the last
/// historical price and summarises losses, drawdowns and tails. EVT pieces
/// that lack enough data are reported as absent rather than failing.
pub fn risk_report(
    model: &SdeModel,
    params: &ParamVector,
    historical: &PricePath,
    config: &RiskConfig,
) -> Result<RiskReport, RiskError> {
    config.validate()?;
    let sim_cfg = SimConfig {
        n_paths: config.n_paths,
        steps: config.horizon,
        dt: config.dt,
        s0: historical.last(),
        seed: config.seed,
    };
    let ens = simulate(model, params, &sim_cfg)?;
    let s0 = sim_cfg.s0;
    let losses: Vec<f64> = ens.terminal().iter().map(|st| s0 - st).collect();
    let (var, cvar) = var_cvar(&losses, config.alpha)?;
    let mdd_paths: Vec<f64> = ens.values.par_chunks(ens.steps + 1).map(max_drawdown).collect::<Result<_, _>>()?;
    let mdd = mean(&mdd_paths);

    let loss_evt = evt_tail_risk(&losses, config).ok();
    let residuals = standardized_residuals(&historical.closes, model, params, config.dt).ok();
    let residual_gpd = residuals.as_ref().and_then(|r| {
        let abs: Vec<f64> = r.iter().map(|x| x.abs()).collect();
        evt_tail_risk(&abs, config).ok().map(|e| e.fit)
    });
    Ok(RiskReport {
        var,
        cvar,
        mdd,
        evt_var: loss_evt.map(|e| e.evt_var),
        evt_cvar: loss_evt.and_then(|e| e.evt_cvar),
        loss_gpd: loss_evt.map(|e| e.fit),
        residual_gpd,
        residual_mean: residuals.as_ref().map(|r| mean(r)),
        residual_std: residuals.as_ref().map(|r| sample_std(r)),
        last_residual: residuals.as_ref().and_then(|r| r.last().copied()),
        mdd_paths,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::parse_model;

    #[test]
    fn var_cvar_on_one_to_hundred() {
        let l: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(var_cvar(&l, 0.95).unwrap(), (95.0, 98.0));
        assert_eq!(var_cvar(&[3.0; 7], 0.9).unwrap(), (3.0, 3.0));
        assert_eq!(var_cvar(&l, 1e-9).unwrap().0, 1.0);
        assert!(matches!(var_cvar(&[], 0.95), Err(RiskError::Empty)));
    }

    #[test]
    fn drawdown_cases() {
        assert_eq!(max_drawdown(&[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert_eq!(max_drawdown(&[100.0, 50.0]).unwrap(), 0.5);
        let d = max_drawdown(&[100.0, 120.0, 90.0, 110.0, 80.0]).unwrap();
        assert!((d - 1.0 / 3.0).abs() < 1e-12);
        assert!(max_drawdown(&[1.0, 0.0]).is_err());
    }

    #[test]
    fn residual_edge_cases() {
        let zero_drift = parse_model("dS = 0 dt + b dW").unwrap();
        let p: ParamVector = "b=0.5".parse().unwrap();
        let r = standardized_residuals(&[10.0; 5], &zero_drift, &p, TRADING_DT).unwrap();
        assert!(r.iter().all(|&x| x == 0.0));
        let flat = parse_model("dS = a dt + 0*S dW").unwrap();
        assert!(matches!(
            standardized_residuals(&[1.0, 2.0, 3.0], &flat, &"a=1".parse().unwrap(), TRADING_DT),
            Err(RiskError::DegenerateDiffusion { index: 0 })
        ));
    }

    #[test]
    fn deterministic_model_has_no_risk() {
        let m = parse_model("dS = 0 dt + 0 dW").unwrap();
        let hist =
            PricePath::from_closes(chrono::NaiveDate::from_ymd_opt(2024, 1, 1).unwrap(), vec![100.0; 30]).unwrap();
        let cfg = RiskConfig { n_paths: 500, ..RiskConfig::default() };
        let r = risk_report(&m, &ParamVector::new(), &hist, &cfg).unwrap();
        assert_eq!((r.var, r.cvar, r.mdd), (0.0, 0.0, 0.0));
        assert!(r.evt_var.is_none());
        let js = serde_json::to_value(&r).unwrap();
        assert!(js.get("evt_var").unwrap().is_null());
        assert_eq!(js["mdd"], 0.0);
    }
}
