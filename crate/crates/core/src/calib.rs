//! Gradient-descent calibration of model parameters against one observed
//! price path.
//!
//! The Brownian and jump draws are frozen for the whole run, so the MAE loss
//! is a deterministic function of the parameters and central finite
//! differences give a usable gradient.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::PricePath;
use crate::dsl::{BinOp, Expr, SdeModel, JUMP_PARAMS};
use crate::params::ParamVector;
use crate::sim::{NoiseBank, PathEnsemble, SimError, Simulator, TRADING_DT};

/// Minimum historical length accepted by [`calibrate`].
pub const MIN_CALIB_LEN: usize = 10;
/// Trial losses above this multiple of the initial loss abort the run.
pub const DIVERGENCE_FACTOR: f64 = 1e6;
const MAX_BACKTRACKS: usize = 40;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CalibError {
    #[error("ensemble has {ensemble} time points but history has {historical}")]
    LengthMismatch { ensemble: usize, historical: usize },
    #[error("history too short: need {need}, got {got}")]
    TooShort { need: usize, got: usize },
    #[error("initial values missing for parameter {0}")]
    MissingInit(String),
    #[error("initial loss is not finite: {0}")]
    NonFiniteInitialLoss(String),
    #[error("invalid calibration config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibConfig {
    pub max_iters: usize,
    pub step_size: f64,
    pub fd_eps: f64,
    pub n_paths: usize,
    pub seed: u64,
    /// Symmetric clamp, widened to `bound * |θ⁰|` for parameters that start
    /// outside it.
    pub bound: f64,
    /// Per-parameter `[lower, upper]` overrides.
    pub bounds: BTreeMap<String, [f64; 2]>,
    pub tol: f64,
    pub dt: f64,
}

impl Default for CalibConfig {
    fn default() -> Self {
        Self {
            max_iters: 200,
            step_size: 1e-2,
            fd_eps: 1e-4,
            n_paths: 64,
            seed: 0,
            bound: 10.0,
            bounds: BTreeMap::new(),
            tol: 1e-6,
            dt: TRADING_DT,
        }
    }
}

impl CalibConfig {
    pub fn validate(&self) -> Result<(), CalibError> {
        let positive = [
            ("step_size", self.step_size),
            ("fd_eps", self.fd_eps),
            ("bound", self.bound),
            ("tol", self.tol),
            ("dt", self.dt),
        ];
        if let Some((name, v)) = positive.iter().find(|(_, v)| !(*v > 0.0 && v.is_finite())) {
            return Err(CalibError::InvalidConfig(format!("{name} must be positive, got {v}")));
        }
        if self.n_paths == 0 {
            return Err(CalibError::InvalidConfig("n_paths must be positive".into()));
        }
        if let Some((k, [lo, hi])) = self.bounds.iter().find(|(_, [lo, hi])| !(lo <= hi)) {
            return Err(CalibError::InvalidConfig(format!("bounds for {k} are inverted: [{lo}, {hi}]")));
        }
        Ok(())
    }

    /// Clamp interval for one parameter given its starting value.
    pub fn bounds_for(&self, name: &str, init: f64) -> (f64, f64) {
        if let Some([lo, hi]) = self.bounds.get(name) {
            return (*lo, *hi);
        }
        let b = self.bound.max(self.bound * init.abs());
        let lo = if name == JUMP_PARAMS[0] || name == JUMP_PARAMS[2] { 0.0 } else { -b };
        (lo, b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibResult {
    pub params: ParamVector,
    pub loss: f64,
    /// Current loss after each iteration, starting with the initial loss.
    pub trace: Vec<f64>,
    pub converged: bool,
    #[serde(default)]
    pub diverged: bool,
    #[serde(default)]
    pub iterations: usize,
}

/// Time-averaged mean absolute deviation of every path from the history.
pub fn mae_loss(ensemble: &PathEnsemble, historical: &[f64]) -> Result<f64, CalibError> {
    if ensemble.steps + 1 != historical.len() {
        return Err(CalibError::LengthMismatch { ensemble: ensemble.steps + 1, historical: historical.len() });
    }
    let n = ensemble.n_paths as f64;
    let t = historical.len() as f64;
    let total: f64 = ensemble.paths().map(|p| p.iter().zip(historical).map(|(s, h)| (s - h).abs()).sum::<f64>()).sum();
    Ok(total / (n * t))
}

/// Starting values when the proposer gives none: 0.1 everywhere, except
/// levels that the state is compared against (the `b` in `a*(b - S)`),
/// which start at the historical mean price.
pub fn default_init(model: &SdeModel, historical: &[f64]) -> ParamVector {
    let mut levels = Vec::new();
    collect_levels(&model.drift, &mut levels);
    let level = historical.iter().sum::<f64>() / historical.len().max(1) as f64;
    model
        .parameters()
        .into_iter()
        .map(|p| {
            let v = if p.len() == 1 && levels.contains(&p.chars().next().unwrap()) { level } else { 0.1 };
            (p, v)
        })
        .collect()
}

fn collect_levels(e: &Expr, out: &mut Vec<char>) {
    match e {
        Expr::Binary(op, l, r) => {
            if matches!(op, BinOp::Add | BinOp::Sub | BinOp::Div) {
                match (l.as_ref(), r.as_ref()) {
                    (Expr::Param(p), Expr::State) | (Expr::State, Expr::Param(p)) => out.push(*p),
                    _ => {}
                }
            }
            collect_levels(l, out);
            collect_levels(r, out);
        }
        Expr::Unary(_, x) => collect_levels(x, out),
        _ => {}
    }
}

/// The calibration loss with its noise frozen.
#[derive(Debug, Clone)]
pub struct LossSurface<'a> {
    sim: Simulator,
    noise: NoiseBank,
    historical: &'a [f64],
    dt: f64,
}

impl<'a> LossSurface<'a> {
    pub fn new(
        model: &SdeModel,
        historical: &'a [f64],
        n_paths: usize,
        seed: u64,
        dt: f64,
    ) -> Result<Self, CalibError> {
        if historical.len() < 2 {
            return Err(CalibError::TooShort { need: 2, got: historical.len() });
        }
        let sim = Simulator::new(model)?;
        let noise = sim.noise(seed, n_paths, historical.len() - 1);
        Ok(Self { sim, noise, historical, dt })
    }

    /// Parameter names in the order used by `theta` slices.
    pub fn names(&self) -> &[String] {
        self.sim.names()
    }

    pub fn try_loss(&self, theta: &[f64]) -> Result<f64, CalibError> {
        let ens = self.sim.run(theta, self.historical[0], self.dt, &self.noise)?;
        mae_loss(&ens, self.historical)
    }

    /// Loss with simulation failures mapped to `+inf`.
    pub fn loss(&self, theta: &[f64]) -> f64 {
        self.try_loss(theta).unwrap_or(f64::INFINITY)
    }

    /// Central differences with step `eps * max(|θ_j|, 1e-3)`. A side that
    /// fails to simulate falls back to the one-sided difference.
    pub fn gradient(&self, theta: &[f64], eps: f64) -> Vec<f64> {
        let base = self.loss(theta);
        let mut x = theta.to_vec();
        (0..theta.len())
            .map(|j| {
                let h = eps * theta[j].abs().max(1e-3);
                x[j] = theta[j] + h;
                let up = self.loss(&x);
                x[j] = theta[j] - h;
                let down = self.loss(&x);
                x[j] = theta[j];
                match (up.is_finite(), down.is_finite()) {
                    (true, true) => (up - down) / (2.0 * h),
                    (true, false) => (up - base) / h,
                    (false, true) => (base - down) / h,
                    (false, false) => 0.0,
                }
            })
            .collect()
    }
}

/// Fits `model` to `historical` starting from `init`.
///
/// Steps are taken in parameters scaled by `max(|θ⁰|, 0.1)` on the loss
/// divided by its initial value, so one step size serves parameters of very
/// different magnitudes. The gradient is preconditioned by a BFGS estimate
/// of the inverse curvature, starting from `step_size` times the identity,
/// and every step backtracks by halving until the loss decreases.
pub fn calibrate(
    model: &SdeModel,
    historical: &PricePath,
    init: &ParamVector,
    config: &CalibConfig,
) -> Result<CalibResult, CalibError> {
    config.validate()?;
    let hist = &historical.closes;
    if hist.len() < MIN_CALIB_LEN {
        return Err(CalibError::TooShort { need: MIN_CALIB_LEN, got: hist.len() });
    }
    let surface = LossSurface::new(model, hist, config.n_paths, config.seed, config.dt)?;
    let names = surface.names().to_vec();
    let mut theta = Vec::with_capacity(names.len());
    for n in &names {
        theta.push(init.get(n).ok_or_else(|| CalibError::MissingInit(n.clone()))?);
    }
    let l0 = match surface.try_loss(&theta) {
        Ok(l) if l.is_finite() => l,
        Ok(l) => return Err(CalibError::NonFiniteInitialLoss(l.to_string())),
        Err(e) => return Err(CalibError::NonFiniteInitialLoss(e.to_string())),
    };
    let bounds: Vec<(f64, f64)> = names.iter().zip(&theta).map(|(n, &v)| config.bounds_for(n, v)).collect();
    for (v, (lo, hi)) in theta.iter_mut().zip(&bounds) {
        *v = v.clamp(*lo, *hi);
    }
    let scale: Vec<f64> = theta.iter().map(|v| v.abs().max(0.1)).collect();
    let n = theta.len();
    let grad_u = |th: &[f64]| -> Vec<f64> {
        surface.gradient(th, config.fd_eps).iter().zip(&scale).map(|(g, s)| g * s / l0).collect()
    };
    let step = |th: &[f64], d: &[f64], alpha: f64| -> Vec<f64> {
        th.iter()
            .zip(d)
            .zip(&scale)
            .zip(&bounds)
            .map(|(((v, d), s), (lo, hi))| (v + alpha * d * s).clamp(*lo, *hi))
            .collect()
    };

    let mut loss = surface.loss(&theta);
    let mut trace = vec![loss];
    let (mut converged, mut diverged) = (loss == 0.0 || n == 0, false);
    let mut iterations = 0;
    let mut h = scaled_identity(n, config.step_size);
    let mut fresh = true;
    let mut g = if converged { vec![0.0; n] } else { grad_u(&theta) };
    while !converged && !diverged && iterations < config.max_iters {
        iterations += 1;
        if g.iter().all(|x| *x == 0.0) {
            converged = true;
            break;
        }
        let mut d: Vec<f64> = (0..n).map(|i| -(0..n).map(|j| h[i * n + j] * g[j]).sum::<f64>()).collect();
        if dot(&d, &g) >= 0.0 {
            h = scaled_identity(n, config.step_size);
            fresh = true;
            d = g.iter().map(|x| -config.step_size * x).collect();
        }
        let (mut best, mut best_loss) = (None, loss);
        let (mut alpha, mut blowups, mut tries) = (1.0, 0, 0);
        while tries < MAX_BACKTRACKS {
            tries += 1;
            let trial = step(&theta, &d, alpha);
            if trial == theta {
                break;
            }
            let tl = surface.loss(&trial);
            if !(tl <= DIVERGENCE_FACTOR * l0) {
                blowups += 1;
            }
            if tl < best_loss {
                best = Some(trial);
                best_loss = tl;
                break;
            }
            alpha *= 0.5;
        }
        // A full first step on a fresh metric may be far too short.
        if best.is_some() && tries == 1 && fresh {
            for _ in 0..MAX_BACKTRACKS {
                alpha *= 2.0;
                let trial = step(&theta, &d, alpha);
                let tl = surface.loss(&trial);
                if tl < best_loss {
                    best = Some(trial);
                    best_loss = tl;
                } else {
                    break;
                }
            }
        }
        match best {
            Some(next) => {
                let g_next = grad_u(&next);
                let s: Vec<f64> = next.iter().zip(&theta).zip(&scale).map(|((a, b), sc)| (a - b) / sc).collect();
                let y: Vec<f64> = g_next.iter().zip(&g).map(|(a, b)| a - b).collect();
                let rel = (loss - best_loss) / loss.max(f64::MIN_POSITIVE);
                theta = next;
                loss = best_loss;
                g = g_next;
                if rel >= config.tol {
                    bfgs_update(&mut h, &s, &y);
                    fresh = false;
                } else if fresh {
                    converged = true;
                } else {
                    // Stalled on a stale curvature estimate; restart before
                    // declaring convergence.
                    h = scaled_identity(n, config.step_size);
                    fresh = true;
                }
                converged |= loss == 0.0;
            }
            None if !fresh => {
                h = scaled_identity(n, config.step_size);
                fresh = true;
            }
            None => {
                let pinned = theta.iter().zip(&bounds).all(|(v, (lo, hi))| v == lo || v == hi);
                diverged = pinned || (tries > 0 && blowups == tries);
                converged = !diverged;
            }
        }
        trace.push(loss);
    }
    Ok(CalibResult { params: ParamVector::from_ordered(&names, &theta), loss, trace, converged, diverged, iterations })
}

fn scaled_identity(n: usize, c: f64) -> Vec<f64> {
    (0..n * n).map(|k| if k % (n + 1) == 0 { c } else { 0.0 }).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Inverse-Hessian BFGS update, skipped when curvature is not positive.
fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64]) {
    let n = s.len();
    let sy = dot(s, y);
    if !(sy > 1e-12 * dot(s, s).sqrt() * dot(y, y).sqrt()) {
        return;
    }
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..n).map(|i| (0..n).map(|j| h[i * n + j] * y[j]).sum()).collect();
    let yhy = dot(y, &hy);
    for i in 0..n {
        for j in 0..n {
            h[i * n + j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::parse_model;
    use crate::sim::{simulate, SimConfig};

    fn ensemble(paths: Vec<Vec<f64>>) -> PathEnsemble {
        let steps = paths[0].len() - 1;
        PathEnsemble { n_paths: paths.len(), steps, dt: TRADING_DT, s0: paths[0][0], seed: 0, values: paths.concat() }
    }

    #[test]
    fn mae_examples() {
        let h = vec![10.0, 11.0, 12.5, 11.0];
        assert_eq!(mae_loss(&ensemble(vec![h.clone()]), &h).unwrap(), 0.0);
        let up: Vec<f64> = h.iter().map(|x| x + 2.0).collect();
        assert_eq!(mae_loss(&ensemble(vec![up]), &h).unwrap(), 2.0);
        let a: Vec<f64> = h.iter().map(|x| x + 1.0).collect();
        let b: Vec<f64> = h.iter().map(|x| x - 3.0).collect();
        assert_eq!(mae_loss(&ensemble(vec![a, b]), &h).unwrap(), 2.0);
        assert!(matches!(
            mae_loss(&ensemble(vec![h.clone()]), &h[..3]),
            Err(CalibError::LengthMismatch { ensemble: 4, historical: 3 })
        ));
    }

    fn gbm_data(seed: u64) -> (SdeModel, PricePath) {
        let m = parse_model("dS = a*S dt + b*S dW").unwrap();
        let p: ParamVector = "a=0.05,b=0.2".parse().unwrap();
        let ens = simulate(&m, &p, &SimConfig { n_paths: 1, seed, ..SimConfig::default() }).unwrap();
        let start = chrono::NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
        (m, PricePath::from_closes(start, ens.path(0).to_vec()).unwrap())
    }

    #[test]
    fn loss_is_deterministic() {
        let (m, h) = gbm_data(3);
        let s = LossSurface::new(&m, &h.closes, 16, 9, TRADING_DT).unwrap();
        let th = [0.1, 0.3];
        assert_eq!(s.loss(&th).to_bits(), s.loss(&th).to_bits());
    }

    #[test]
    fn start_at_truth_is_monotone_and_converges() {
        let (m, h) = gbm_data(5);
        let cfg = CalibConfig { n_paths: 1, seed: 5, ..CalibConfig::default() };
        let r = calibrate(&m, &h, &"a=0.05,b=0.2".parse().unwrap(), &cfg).unwrap();
        assert!(r.converged);
        assert_eq!(r.loss, 0.0);
        assert!(r.trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn recovers_gbm_on_shared_noise() {
        let (m, h) = gbm_data(11);
        let cfg = CalibConfig { n_paths: 1, seed: 11, ..CalibConfig::default() };
        let r = calibrate(&m, &h, &"a=0.1,b=0.4".parse().unwrap(), &cfg).unwrap();
        assert!(r.trace.windows(2).all(|w| w[1] <= w[0]));
        let a = r.params.get("a").unwrap();
        let b = r.params.get("b").unwrap();
        assert!((a - 0.05).abs() < 0.02, "a={a}");
        assert!((b - 0.2).abs() < 0.05, "b={b}");
    }

    #[test]
    fn finite_difference_steps_agree() {
        let (m, h) = gbm_data(2);
        let s = LossSurface::new(&m, &h.closes, 32, 4, TRADING_DT).unwrap();
        let th = [0.08, 0.3];
        let g4 = s.gradient(&th, 1e-4);
        let g5 = s.gradient(&th, 1e-5);
        for (x, y) in g4.iter().zip(&g5) {
            assert!((x - y).abs() <= 0.05 * x.abs().max(y.abs()), "{x} vs {y}");
        }
    }

    #[test]
    fn levels_default_to_mean_price() {
        let m = parse_model("dS = a*(b - S) dt + c*sqrt(S) dW").unwrap();
        let p = default_init(&m, &[90.0, 110.0]);
        assert_eq!(p.get("a"), Some(0.1));
        assert_eq!(p.get("b"), Some(100.0));
        assert_eq!(p.get("c"), Some(0.1));
    }

    #[test]
    fn bounds_widen_and_respect_jump_signs() {
        let c = CalibConfig::default();
        assert_eq!(c.bounds_for("a", 0.5), (-10.0, 10.0));
        assert_eq!(c.bounds_for("b", 100.0), (-1000.0, 1000.0));
        assert_eq!(c.bounds_for("lambda", 1.0), (0.0, 10.0));
        assert_eq!(c.bounds_for("sigma_j", 1.0), (0.0, 10.0));
        assert_eq!(c.bounds_for("mu_j", 1.0), (-10.0, 10.0));
    }

    #[test]
    fn errors() {
        let (m, h) = gbm_data(1);
        let cfg = CalibConfig::default();
        assert!(matches!(
            calibrate(&m, &h, &"a=0.1".parse().unwrap(), &cfg),
            Err(CalibError::MissingInit(ref n)) if n == "b"
        ));
        let short = h.slice(0..5);
        assert!(matches!(
            calibrate(&m, &short, &"a=0.1,b=0.1".parse().unwrap(), &cfg),
            Err(CalibError::TooShort { .. })
        ));
        let bad = parse_model("dS = a/(S-S) dt + b dW").unwrap();
        assert!(matches!(
            calibrate(&bad, &h, &"a=0.1,b=0.1".parse().unwrap(), &cfg),
            Err(CalibError::NonFiniteInitialLoss(_))
        ));
    }
}
