//! Ground-truth recovery benchmark: simulate data from a known SDE, run
//! discovery on it and report how close the search came, in the column
//! order of the classic recovery table.

use std::fmt::Write as _;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::agents::Agents;
use crate::data::PricePath;
use crate::discovery::{best_model, run_discovery, DiscoveryConfig, DiscoveryError, DiscoveryMemory, ModelProposer};
use crate::dsl::{parse_model, ParseError, SdeModel};
use crate::graph::{complexity, diversity, model_similarity, to_symbolic_graph, DEFAULT_WL_ROUNDS};
use crate::params::{ParamParseError, ParamVector};
use crate::seed::derive_seed;
use crate::sim::{simulate, SimConfig, SimError};
use crate::stats::{mean, sample_std};

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("runs must be at least 1")]
    NoRuns,
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Params(#[from] ParamParseError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Discovery(#[from] DiscoveryError),
}

/// One known generating process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthSpec {
    pub name: String,
    pub model: SdeModel,
    pub params: ParamVector,
    /// `n_paths` is ignored; one path is generated per run.
    pub sim: SimConfig,
    pub runs: usize,
    /// Calibrate on the same noise stream that generated the data.
    pub common_noise: bool,
}

impl GroundTruthSpec {
    pub fn new(name: &str, model: &str, params: &str) -> Result<Self, BenchError> {
        Ok(Self {
            name: name.into(),
            model: parse_model(model)?,
            params: params.parse()?,
            sim: SimConfig::default(),
            runs: 1,
            common_noise: true,
        })
    }

    /// The three classic targets.
    pub fn standard_targets() -> Vec<GroundTruthSpec> {
        [
            ("CIR", "dS = a*(b - S) dt + c*sqrt(S) dW", "a=0.5,b=100,c=1"),
            ("CEV", "dS = a*S dt + b*S^c dW", "a=0.05,b=0.502,c=0.8"),
            ("JD", "dS = a*S dt + b*S dW + S dJ", "a=0.05,b=0.2,lambda=12,mu_j=-0.02,sigma_j=0.05"),
        ]
        .into_iter()
        .map(|(n, m, p)| GroundTruthSpec::new(n, m, p).expect("standard targets parse"))
        .collect()
    }

    pub fn data_seed(&self, root: u64, run: usize) -> u64 {
        derive_seed(root, &format!("bench/{}/run{run}/data", self.name))
    }

    /// The generated history for `run`.
    pub fn generate(&self, root: u64, run: usize) -> Result<PricePath, BenchError> {
        let cfg = SimConfig { n_paths: 1, seed: self.data_seed(root, run), ..self.sim.clone() };
        let ens = simulate(&self.model, &self.params, &cfg)?;
        let start = NaiveDate::from_ymd_opt(2020, 1, 1).expect("valid date");
        Ok(PricePath::from_closes(start, ens.path(0).to_vec()).expect("simulated prices are positive"))
    }
}

/// Weights of the table-style combined column:
/// `score · K_score · similarity − loss · L`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TableWeights {
    pub score: f64,
    pub loss: f64,
}

impl Default for TableWeights {
    fn default() -> Self {
        Self { score: 1.0, loss: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRun {
    pub run: usize,
    pub seed: u64,
    pub completed: bool,
    pub error: Option<String>,
    pub best_model: Option<String>,
    pub loss: Option<f64>,
    pub score: Option<f64>,
    /// Similarity of the best model to the target.
    pub similarity: Option<f64>,
    pub combined: Option<f64>,
    pub diversity: Option<f64>,
    pub complexity: Option<f64>,
    /// Loss of the opening GBM candidate.
    pub baseline_loss: Option<f64>,
    /// `(model, similarity to target)` for every tested model.
    pub tested: Vec<(String, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Aggregate {
    /// Mean and sample standard deviation of the present values.
    pub fn of(values: impl IntoIterator<Item = Option<f64>>) -> Option<Aggregate> {
        let v: Vec<f64> = values.into_iter().flatten().collect();
        if v.is_empty() {
            return None;
        }
        let std = if v.len() > 1 { sample_std(&v) } else { 0.0 };
        Some(Aggregate { mean: mean(&v), std, n: v.len() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub target: String,
    pub target_model: String,
    pub proposer: String,
    pub runs: Vec<BenchRun>,
    pub failed: usize,
    pub loss: Option<Aggregate>,
    pub score: Option<Aggregate>,
    pub similarity: Option<Aggregate>,
    pub combined: Option<Aggregate>,
    pub diversity: Option<Aggregate>,
    pub complexity: Option<Aggregate>,
}

/// Runs discovery `spec.runs` times on fresh data and aggregates the
/// completed runs.
pub fn run_benchmark(
    spec: &GroundTruthSpec,
    proposer: &mut dyn ModelProposer,
    proposer_name: &str,
    agents: &Agents,
    config: &DiscoveryConfig,
    weights: TableWeights,
) -> Result<BenchReport, BenchError> {
    if spec.runs == 0 {
        return Err(BenchError::NoRuns);
    }
    let target_graph = to_symbolic_graph(&spec.model);
    let mut runs = Vec::with_capacity(spec.runs);
    for run in 0..spec.runs {
        let seed = spec.data_seed(config.seed, run);
        let history = spec.generate(config.seed, run)?;
        let cfg = DiscoveryConfig {
            seed: derive_seed(config.seed, &format!("bench/{}/run{run}/discovery", spec.name)),
            calib_seed: if spec.common_noise { Some(seed) } else { config.calib_seed },
            ..config.clone()
        };
        let mut out = BenchRun {
            run,
            seed,
            completed: false,
            error: None,
            best_model: None,
            loss: None,
            score: None,
            similarity: None,
            combined: None,
            diversity: None,
            complexity: None,
            baseline_loss: None,
            tested: Vec::new(),
        };
        let memory = match run_discovery(&history, proposer, agents, &cfg, DiscoveryMemory::default(), None) {
            Ok(m) => m,
            Err(e) => {
                out.error = Some(e.to_string());
                runs.push(out);
                continue;
            }
        };
        out.tested =
            memory.records.iter().map(|r| (r.model.render(), model_similarity(&r.model, &spec.model))).collect();
        out.baseline_loss = memory.records.first().and_then(|r| r.loss);
        let graphs: Vec<_> = memory.records.iter().map(|r| to_symbolic_graph(&r.model)).collect();
        out.diversity = diversity(&graphs, DEFAULT_WL_ROUNDS).ok();
        match best_model(&memory) {
            Ok(best) if !memory.loop_failed => {
                let g = to_symbolic_graph(&best.model);
                let sim = crate::graph::similarity(&g, &target_graph, DEFAULT_WL_ROUNDS);
                let score = best.combined().map(f64::from);
                out.completed = true;
                out.best_model = Some(best.model.render());
                out.loss = best.loss;
                out.score = score;
                out.similarity = Some(sim);
                out.complexity = Some(complexity(&g));
                out.combined = match (score, best.loss) {
                    (Some(s), Some(l)) => Some(weights.score * s * sim - weights.loss * l),
                    _ => None,
                };
            }
            Ok(_) => out.error = Some("discovery loop failed".into()),
            Err(e) => out.error = Some(e.to_string()),
        }
        runs.push(out);
    }
    let done: Vec<&BenchRun> = runs.iter().filter(|r| r.completed).collect();
    let agg = |f: fn(&BenchRun) -> Option<f64>| Aggregate::of(done.iter().map(|r| f(r)));
    Ok(BenchReport {
        target: spec.name.clone(),
        target_model: spec.model.render(),
        proposer: proposer_name.into(),
        failed: runs.len() - done.len(),
        loss: agg(|r| r.loss),
        score: agg(|r| r.score),
        similarity: agg(|r| r.similarity),
        combined: agg(|r| r.combined),
        diversity: agg(|r| r.diversity),
        complexity: agg(|r| r.complexity),
        runs,
    })
}

fn cell(a: Option<Aggregate>, digits: usize) -> String {
    match a {
        Some(a) if a.n > 1 => format!("{:.digits$} ± {:.digits$}", a.mean, a.std),
        Some(a) => format!("{:.digits$}", a.mean),
        None => "--".into(),
    }
}

/// One table section per target.
pub fn render_markdown(reports: &[BenchReport]) -> String {
    let mut out = String::new();
    for r in reports {
        let _ = writeln!(out, "### {}: `{}`\n", r.target, r.target_model);
        let _ = writeln!(
            out,
            "| Proposer | Loss | K_score | K_similarity(m, m*) | Combined | K_diversity | K_complexity | Failed |"
        );
        let _ = writeln!(out, "|---|---|---|---|---|---|---|---|");
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} | {} | {} | {}/{} |\n",
            r.proposer,
            cell(r.loss, 4),
            cell(r.score, 1),
            cell(r.similarity, 3),
            cell(r.combined, 1),
            cell(r.diversity, 3),
            cell(r.complexity, 2),
            r.failed,
            r.runs.len(),
        );
    }
    out
}

/// One row per run in the same column order.
pub fn render_csv(reports: &[BenchReport]) -> String {
    let opt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
    let mut out = String::from(
        "target,proposer,run,seed,completed,best_model,loss,score,similarity,combined,diversity,complexity\n",
    );
    for r in reports {
        for run in &r.runs {
            let _ = writeln!(
                out,
                "{},{},{},{},{},\"{}\",{},{},{},{},{},{}",
                r.target,
                r.proposer,
                run.run,
                run.seed,
                run.completed,
                run.best_model.as_deref().unwrap_or(""),
                opt(run.loss),
                opt(run.score),
                opt(run.similarity),
                opt(run.combined),
                opt(run.diversity),
                opt(run.complexity),
            );
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calib::CalibConfig;
    use crate::discovery::{OfflinePoolProposer, BENCHMARK_POOL};

    fn config() -> DiscoveryConfig {
        DiscoveryConfig {
            iterations: 15,
            calib: CalibConfig { n_paths: 1, ..CalibConfig::default() },
            eval_paths: 8,
            seed: 42,
            ..DiscoveryConfig::default()
        }
    }

    #[test]
    fn cir_target_is_recovered_from_the_benchmark_pool() {
        let spec = GroundTruthSpec::standard_targets().swap_remove(0);
        let mut p = OfflinePoolProposer::subset(BENCHMARK_POOL);
        let r = run_benchmark(&spec, &mut p, "offline", &Agents::Mock, &config(), TableWeights::default()).unwrap();
        let run = &r.runs[0];
        assert!(run.completed);
        assert_eq!(run.similarity, Some(1.0));
        assert!(run.loss.unwrap() < run.baseline_loss.unwrap());
        let again = run_benchmark(&spec, &mut p, "offline", &Agents::Mock, &config(), TableWeights::default()).unwrap();
        assert_eq!(again.runs[0].diversity, run.diversity);
        assert!(render_markdown(std::slice::from_ref(&r)).contains("K_diversity"));
        assert_eq!(render_csv(&[r]).lines().count(), 2);
    }

    #[test]
    fn absent_target_scores_below_one() {
        let spec = GroundTruthSpec::standard_targets().swap_remove(1);
        let mut p = OfflinePoolProposer::subset(&["gbm", "cir", "jump-diffusion"]);
        let r = run_benchmark(&spec, &mut p, "offline", &Agents::Mock, &config(), TableWeights::default()).unwrap();
        assert!(r.runs[0].similarity.unwrap() < 1.0);
    }

    #[test]
    fn aggregates_match_hand_values() {
        let a = Aggregate::of([Some(1.0), None, Some(3.0)]).unwrap();
        assert_eq!((a.mean, a.n), (2.0, 2));
        assert!((a.std - 2f64.sqrt()).abs() < 1e-12);
        assert!(Aggregate::of([None]).is_none());
    }
}
