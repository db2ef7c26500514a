//! Euler-Maruyama simulation on a frozen noise bank.
//!
//! Noise for path `i` comes from two ChaCha streams under the run seed:
//! stream `2i` for the Brownian increments and `2i + 1` for the jump
//! uniforms and jump-size normals. Turning jumps on or off therefore never
//! changes the Brownian draws, and any parameter vector can be replayed on
//! the same draws (common random numbers).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dsl::SdeModel;
use crate::eval::{eval_term, CompiledModel, EvalError};
use crate::params::ParamVector;

pub const STATE_FLOOR: f64 = 1e-8;
pub const TRADING_DT: f64 = 1.0 / 252.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub n_paths: usize,
    pub steps: usize,
    pub dt: f64,
    pub s0: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { n_paths: 64, steps: 252, dt: TRADING_DT, s0: 100.0, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("path {path} step {step}: {term} term failed: {cause}")]
    NonFinite { path: usize, step: usize, term: &'static str, cause: String },
}

/// Pre-drawn standard normals and jump uniforms, laid out path-major.
#[derive(Debug, Clone)]
pub struct NoiseBank {
    pub n_paths: usize,
    pub steps: usize,
    pub seed: u64,
    w: Vec<f64>,
    jump_u: Vec<f64>,
    jump_z: Vec<f64>,
}

impl NoiseBank {
    pub fn generate(seed: u64, n_paths: usize, steps: usize, with_jumps: bool) -> Self {
        let per_path: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = (0..n_paths)
            .into_par_iter()
            .map(|i| {
                let mut rw = ChaCha8Rng::seed_from_u64(seed);
                rw.set_stream(2 * i as u64);
                let w: Vec<f64> = (0..steps).map(|_| rw.sample(StandardNormal)).collect();
                let (mut u, mut z) = (Vec::new(), Vec::new());
                if with_jumps {
                    let mut rj = ChaCha8Rng::seed_from_u64(seed);
                    rj.set_stream(2 * i as u64 + 1);
                    for _ in 0..steps {
                        u.push(rj.random::<f64>());
                        z.push(rj.sample(StandardNormal));
                    }
                }
                (w, u, z)
            })
            .collect();
        let mut bank = NoiseBank {
            n_paths,
            steps,
            seed,
            w: Vec::with_capacity(n_paths * steps),
            jump_u: Vec::new(),
            jump_z: Vec::new(),
        };
        for (w, u, z) in per_path {
            bank.w.extend(w);
            bank.jump_u.extend(u);
            bank.jump_z.extend(z);
        }
        bank
    }

    pub fn has_jumps(&self) -> bool {
        !self.jump_u.is_empty()
    }

    /// Brownian standard normals of one path.
    pub fn normals(&self, path: usize) -> &[f64] {
        &self.w[path * self.steps..(path + 1) * self.steps]
    }

    fn jumps(&self, path: usize) -> (&[f64], &[f64]) {
        let r = path * self.steps..(path + 1) * self.steps;
        (&self.jump_u[r.clone()], &self.jump_z[r])
    }
}

/// Inverse-CDF Poisson draw with mean `m` from a uniform `u`.
pub fn poisson_from_uniform(u: f64, m: f64) -> u32 {
    if m <= 0.0 {
        return 0;
    }
    let mut k = 0u32;
    let mut p = (-m).exp();
    let mut cdf = p;
    while u > cdf && k < 10_000 {
        k += 1;
        p *= m / f64::from(k);
        cdf += p;
        if p == 0.0 {
            break;
        }
    }
    k
}

/// Simulated paths, `values[path * (steps + 1) + k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathEnsemble {
    pub n_paths: usize,
    pub steps: usize,
    pub dt: f64,
    pub s0: f64,
    pub seed: u64,
    pub values: Vec<f64>,
}

impl PathEnsemble {
    pub fn path(&self, i: usize) -> &[f64] {
        let w = self.steps + 1;
        &self.values[i * w..(i + 1) * w]
    }

    pub fn paths(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.steps + 1)
    }

    pub fn terminal(&self) -> Vec<f64> {
        self.paths().map(|p| p[self.steps]).collect()
    }

    /// CSV with one row per path: `path,t0,...,t{steps}`.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> csv::Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["path".to_string()];
        header.extend((0..=self.steps).map(|k| format!("t{k}")));
        wtr.write_record(&header)?;
        for (i, p) in self.paths().enumerate() {
            let mut row = vec![i.to_string()];
            row.extend(p.iter().map(|v| v.to_string()));
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Sidecar written next to an exported ensemble CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleMeta {
    pub model: String,
    pub params: ParamVector,
    pub seed: u64,
    pub dt: f64,
}

impl EnsembleMeta {
    pub fn new(model: &SdeModel, params: &ParamVector, ensemble: &PathEnsemble) -> Self {
        Self { model: model.render(), params: params.clone(), seed: ensemble.seed, dt: ensemble.dt }
    }
}

/// A model compiled once and replayed on many parameter vectors.
#[derive(Debug, Clone)]
pub struct Simulator {
    model: SdeModel,
    compiled: CompiledModel,
}

impl Simulator {
    pub fn new(model: &SdeModel) -> Result<Self, SimError> {
        Ok(Self { model: model.clone(), compiled: CompiledModel::new(model)? })
    }

    pub fn names(&self) -> &[String] {
        &self.compiled.names
    }

    pub fn model(&self) -> &SdeModel {
        &self.model
    }

    pub fn theta(&self, params: &ParamVector) -> Result<Vec<f64>, SimError> {
        self.compiled
            .names
            .iter()
            .map(|n| params.get(n).ok_or_else(|| EvalError::UnboundParameter(n.clone()).into()))
            .collect()
    }

    pub fn noise(&self, seed: u64, n_paths: usize, steps: usize) -> NoiseBank {
        NoiseBank::generate(seed, n_paths, steps, self.model.has_jump())
    }

    /// Runs every path of `noise` from `s0`.
    pub fn run(&self, theta: &[f64], s0: f64, dt: f64, noise: &NoiseBank) -> Result<PathEnsemble, SimError> {
        if !(dt > 0.0 && dt.is_finite()) || !(s0.is_finite()) {
            return Err(SimError::InvalidConfig(format!("dt={dt}, s0={s0}")));
        }
        if self.model.has_jump() && !noise.has_jumps() {
            return Err(SimError::InvalidConfig("noise bank has no jump draws".into()));
        }
        let width = noise.steps + 1;
        let mut values = vec![0.0; noise.n_paths * width];
        values
            .par_chunks_mut(width)
            .enumerate()
            .try_for_each(|(i, out)| self.run_path(theta, s0, dt, noise, i, out))?;
        Ok(PathEnsemble { n_paths: noise.n_paths, steps: noise.steps, dt, s0, seed: noise.seed, values })
    }

    fn run_path(
        &self,
        theta: &[f64],
        s0: f64,
        dt: f64,
        noise: &NoiseBank,
        i: usize,
        out: &mut [f64],
    ) -> Result<(), SimError> {
        let c = &self.compiled;
        let sqdt = dt.sqrt();
        let z = noise.normals(i);
        let (ju, jz) = if self.model.has_jump() { noise.jumps(i) } else { (&[][..], &[][..]) };
        let jump_params = c.jump_idx.map(|[l, m, s]| (theta[l].max(0.0), theta[m], theta[s]));
        let mut stack = Vec::with_capacity(16);
        let mut s = s0;
        out[0] = s;
        for k in 0..noise.steps {
            let t = k as f64 * dt;
            let fail = |term: &'static str, expr: &crate::dsl::Expr| {
                let params = ParamVector::from_ordered(&c.names, theta);
                let cause = match eval_term(expr, &params, s, t) {
                    Err(e) => e.to_string(),
                    Ok(v) => format!("value {v}"),
                };
                SimError::NonFinite { path: i, step: k, term, cause }
            };
            let f = c.drift.eval(theta, s, t, &mut stack).ok_or_else(|| fail("drift", &self.model.drift))?;
            let mut next = s + f * dt;
            if let (Some(g), Some(expr)) = (&c.diffusion, &self.model.diffusion) {
                let g = g.eval(theta, s, t, &mut stack).ok_or_else(|| fail("diffusion", expr))?;
                next += g * sqdt * z[k];
            }
            if let (Some(h), Some(expr), Some((lambda, mu, sigma))) = (&c.jump, &self.model.jump, jump_params) {
                let n = poisson_from_uniform(ju[k], lambda * dt);
                if n > 0 {
                    let n = f64::from(n);
                    let dj = n * mu + sigma * n.sqrt() * jz[k];
                    let h = h.eval(theta, s, t, &mut stack).ok_or_else(|| fail("jump", expr))?;
                    next += h * dj;
                }
            }
            if !next.is_finite() {
                return Err(SimError::NonFinite { path: i, step: k, term: "state", cause: format!("{next}") });
            }
            s = next.max(STATE_FLOOR);
            out[k + 1] = s;
        }
        Ok(())
    }
}

/// Simulates `model` under `params` with noise drawn from `config.seed`.
pub fn simulate(model: &SdeModel, params: &ParamVector, config: &SimConfig) -> Result<PathEnsemble, SimError> {
    if config.n_paths == 0 || config.steps == 0 {
        return Err(SimError::InvalidConfig("n_paths and steps must be positive".into()));
    }
    if !(config.s0 > 0.0) {
        return Err(SimError::InvalidConfig(format!("s0 must be positive, got {}", config.s0)));
    }
    let sim = Simulator::new(model)?;
    let theta = sim.theta(params)?;
    let noise = sim.noise(config.seed, config.n_paths, config.steps);
    sim.run(&theta, config.s0, config.dt, &noise)
}
