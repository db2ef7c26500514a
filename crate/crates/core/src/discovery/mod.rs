//! The builder-critic discovery loop: build (calibrate and simulate) the
//! chosen model, test it against history, summarize, score, collect new
//! proposals and choose the next model.

mod library;
mod scoring;

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use library::{complete_init, gbm, library, library_subset, LibraryEntry, BENCHMARK_POOL, LIBRARY};
pub use scoring::{
    delta_norm, metrics_subscore, score_candidate, score_parts, DeltaWeight, ScoreBreakdown, ScorerWeights,
    DEFAULT_DECAY,
};

use crate::agents::{AgentError, Agents, CandidateDigest};
use crate::calib::{calibrate, CalibConfig, CalibError};
use crate::data::PricePath;
use crate::dsl::{parse_suggestions_detailed, EmptySuggestions, SdeModel, Suggestion};
use crate::graph::{complexity, model_similarity, to_symbolic_graph};
use crate::metrics::{evaluate_candidate, summary_stats, CandidateEvaluation, MetricReport};
use crate::params::ParamVector;
use crate::seed::derive_seed;
use crate::sim::{simulate, SimConfig, SimError};

pub const MIN_DISCOVERY_LEN: usize = 60;

#[derive(Debug, thiserror::Error)]
pub enum DiscoveryError {
    #[error("history too short for discovery: need {need}, got {got}")]
    TooShort { need: usize, got: usize },
    #[error("every untested model in the pool has been tried")]
    PoolExhausted,
    #[error("discovery loop failed: no candidate built successfully")]
    LoopFailed,
    #[error("invalid discovery config: {0}")]
    InvalidConfig(String),
    #[error("memory file {path} line {line}: {msg}")]
    Memory { path: String, line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Agent(#[from] AgentError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CandidateStatus {
    Ok,
    ImplementFailed,
    CalibrateFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    /// 1-based iteration that tested this model.
    pub iteration: usize,
    pub model: SdeModel,
    pub init: ParamVector,
    pub fitted: Option<ParamVector>,
    pub loss: Option<f64>,
    pub evaluation: Option<CandidateEvaluation>,
    /// Novelty as emitted, 0–100.
    pub novelty: Option<u8>,
    pub score: Option<ScoreBreakdown>,
    pub summary: String,
    pub status: CandidateStatus,
    pub error: Option<String>,
    pub attempts: u32,
}

impl CandidateRecord {
    pub fn is_ok(&self) -> bool {
        self.status == CandidateStatus::Ok
    }

    pub fn combined(&self) -> Option<u8> {
        self.score.map(|s| s.combined)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryMemory {
    pub records: Vec<CandidateRecord>,
    /// Proposed but not yet tested.
    pub pool: Vec<Suggestion>,
    /// Rendered model chosen at each iteration.
    pub chosen: Vec<String>,
    pub loop_failed: bool,
    /// The loop stopped early because nothing untested was left.
    pub exhausted: bool,
}

impl DiscoveryMemory {
    /// Number of tested (or failed) iterations.
    pub fn iteration(&self) -> usize {
        self.records.len()
    }

    pub fn tested_models(&self) -> Vec<SdeModel> {
        self.records.iter().map(|r| r.model.clone()).collect()
    }

    fn is_known(&self, m: &SdeModel) -> bool {
        self.records.iter().any(|r| &r.model == m) || self.pool.iter().any(|s| &s.model == m)
    }

    /// Adds suggestions that are neither tested nor already pooled.
    pub fn extend_pool(&mut self, suggestions: impl IntoIterator<Item = Suggestion>) {
        for s in suggestions {
            if !self.is_known(&s.model) {
                self.pool.push(s);
            }
        }
    }

    /// One line per tested model: status, loss and combined score.
    pub fn digest(&self) -> String {
        self.records
            .iter()
            .map(|r| {
                let loss = r.loss.map_or("n/a".to_string(), |l| format!("{l:.6}"));
                let score = r.combined().map_or("n/a".to_string(), |c| c.to_string());
                format!("{}. {} | status {:?} | loss {loss} | score {score}", r.iteration, r.model.render(), r.status)
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// Appends one JSON record per line.
    pub fn append_jsonl(path: &Path, record: &CandidateRecord) -> Result<(), DiscoveryError> {
        let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
        let line = serde_json::to_string(record).map_err(|e| DiscoveryError::Memory {
            path: path.display().to_string(),
            line: 0,
            msg: e.to_string(),
        })?;
        writeln!(f, "{line}")?;
        Ok(())
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<(), DiscoveryError> {
        std::fs::write(path, "")?;
        for r in &self.records {
            Self::append_jsonl(path, r)?;
        }
        Ok(())
    }

    /// Records from a JSONL file. A torn final line from a crash is
    /// ignored; malformed earlier lines are errors.
    pub fn load_jsonl(path: &Path) -> Result<DiscoveryMemory, DiscoveryError> {
        let f = std::fs::File::open(path)?;
        let lines: Vec<String> = std::io::BufReader::new(f).lines().collect::<Result<_, _>>()?;
        let last = lines.iter().rposition(|l| !l.trim().is_empty());
        let mut memory = DiscoveryMemory::default();
        for (i, line) in lines.iter().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            match serde_json::from_str::<CandidateRecord>(line) {
                Ok(r) => {
                    memory.chosen.push(r.model.render());
                    memory.records.push(r);
                }
                Err(_) if Some(i) == last => break,
                Err(e) => {
                    return Err(DiscoveryError::Memory {
                        path: path.display().to_string(),
                        line: i + 1,
                        msg: e.to_string(),
                    })
                }
            }
        }
        Ok(memory)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProposerBinding {
    Agentic,
    #[default]
    OfflinePool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscoveryConfig {
    pub iterations: usize,
    pub retry_budget: u32,
    pub calib: CalibConfig,
    /// Paths simulated for the metric comparison.
    pub eval_paths: usize,
    pub seed: u64,
    /// Calibration noise seed shared by every candidate; derived from
    /// `seed` when absent.
    pub calib_seed: Option<u64>,
    pub weights: ScorerWeights,
    pub proposer: ProposerBinding,
    /// Suggestions requested per proposer call.
    pub suggestions_per_call: usize,
}

impl Default for DiscoveryConfig {
    fn default() -> Self {
        Self {
            iterations: 15,
            retry_budget: 3,
            calib: CalibConfig::default(),
            eval_paths: 64,
            seed: 0,
            calib_seed: None,
            weights: ScorerWeights::default(),
            proposer: ProposerBinding::OfflinePool,
            suggestions_per_call: 5,
        }
    }
}

impl DiscoveryConfig {
    pub fn validate(&self) -> Result<(), DiscoveryError> {
        if self.iterations == 0 {
            return Err(DiscoveryError::InvalidConfig("iterations must be at least 1".into()));
        }
        if self.eval_paths == 0 {
            return Err(DiscoveryError::InvalidConfig("eval_paths must be positive".into()));
        }
        self.calib.validate().map_err(|e| DiscoveryError::InvalidConfig(e.to_string()))
    }

    pub fn calib_seed(&self) -> u64 {
        self.calib_seed.unwrap_or_else(|| derive_seed(self.seed, "discovery/calib"))
    }
}

/// What a proposer sees when asked for new candidates.
pub struct ProposalContext<'a> {
    pub memory: &'a DiscoveryMemory,
    pub historical_stats: &'a MetricReport,
    pub count: usize,
}

pub trait ModelProposer {
    fn propose(&mut self, ctx: &ProposalContext<'_>) -> Result<Vec<Suggestion>, DiscoveryError>;
}

/// Offers a fixed list of library entries on every call.
#[derive(Debug, Clone)]
pub struct OfflinePoolProposer {
    pub entries: Vec<LibraryEntry>,
}

impl OfflinePoolProposer {
    pub fn full() -> Self {
        Self { entries: library() }
    }

    pub fn subset(names: &[&str]) -> Self {
        Self { entries: library_subset(names) }
    }
}

impl ModelProposer for OfflinePoolProposer {
    fn propose(&mut self, _: &ProposalContext<'_>) -> Result<Vec<Suggestion>, DiscoveryError> {
        Ok(self.entries.iter().map(LibraryEntry::suggestion).collect())
    }
}

/// Asks the suggestor agent and parses its reply; a reply with no
/// parseable model is an error.
#[derive(Debug, Clone)]
pub struct LlmProposer {
    pub agents: Agents,
}

impl ModelProposer for LlmProposer {
    fn propose(&mut self, ctx: &ProposalContext<'_>) -> Result<Vec<Suggestion>, DiscoveryError> {
        let stats =
            ctx.historical_stats.values().iter().map(|(k, v)| format!("{k}: {v:.6}")).collect::<Vec<_>>().join("\n");
        let raw = self.agents.suggest(&ctx.memory.digest(), &stats, ctx.count)?;
        let detailed = parse_suggestions_detailed(&raw);
        let candidates = detailed.len();
        let ok: Vec<Suggestion> = detailed.into_iter().filter_map(|(_, r)| r.ok()).collect();
        if ok.is_empty() {
            return Err(AgentError::from(EmptySuggestions { candidates }).into());
        }
        Ok(ok)
    }
}

/// Offline choice: the untested pool model with the highest
/// `(1 - max similarity to tested) / complexity`; ties go to pool order.
pub fn choose_next(memory: &DiscoveryMemory, pool: &[Suggestion]) -> Result<usize, DiscoveryError> {
    let tested = memory.tested_models();
    let tested_graphs: Vec<_> = tested.iter().map(to_symbolic_graph).collect();
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in pool.iter().enumerate() {
        if tested.contains(&s.model) {
            continue;
        }
        let g = to_symbolic_graph(&s.model);
        let max_sim = tested_graphs
            .iter()
            .map(|t| crate::graph::similarity(&g, t, crate::graph::DEFAULT_WL_ROUNDS))
            .fold(0.0, f64::max);
        let priority = (1.0 - max_sim) / complexity(&g).max(1.0);
        if best.is_none_or(|(_, p)| priority > p) {
            best = Some((i, priority));
        }
    }
    best.map(|(i, _)| i).ok_or(DiscoveryError::PoolExhausted)
}

/// The ok record with the lowest loss; ties go to the higher combined
/// score, then the earlier iteration.
pub fn best_model(memory: &DiscoveryMemory) -> Result<&CandidateRecord, DiscoveryError> {
    memory
        .records
        .iter()
        .filter(|r| r.is_ok() && r.loss.is_some())
        .min_by(|a, b| {
            a.loss
                .unwrap()
                .total_cmp(&b.loss.unwrap())
                .then_with(|| b.combined().cmp(&a.combined()))
                .then_with(|| a.iteration.cmp(&b.iteration))
        })
        .ok_or(DiscoveryError::LoopFailed)
}

/// Outcome of building one candidate.
struct Built {
    fitted: ParamVector,
    loss: f64,
    evaluation: CandidateEvaluation,
}

fn build(
    model: &SdeModel,
    init: &ParamVector,
    historical: &PricePath,
    config: &DiscoveryConfig,
    iteration: usize,
) -> Result<Built, (CandidateStatus, String)> {
    let calib = CalibConfig { seed: config.calib_seed(), ..config.calib.clone() };
    let r = calibrate(model, historical, init, &calib).map_err(|e| match e {
        CalibError::Sim(_) | CalibError::NonFiniteInitialLoss(_) | CalibError::MissingInit(_) => {
            (CandidateStatus::ImplementFailed, e.to_string())
        }
        other => (CandidateStatus::CalibrateFailed, other.to_string()),
    })?;
    if r.diverged || !r.loss.is_finite() {
        return Err((CandidateStatus::CalibrateFailed, format!("calibration diverged at loss {}", r.loss)));
    }
    let sim = SimConfig {
        n_paths: config.eval_paths,
        steps: historical.len() - 1,
        dt: config.calib.dt,
        s0: historical.closes[0],
        seed: derive_seed(config.seed, &format!("discovery/iter{iteration}/eval")),
    };
    let ens = simulate(model, &r.params, &sim)
        .map_err(|e: SimError| (CandidateStatus::CalibrateFailed, format!("simulation with fitted parameters: {e}")))?;
    let evaluation = evaluate_candidate(&ens, &historical.closes)
        .map_err(|e| (CandidateStatus::CalibrateFailed, format!("evaluation: {e}")))?;
    Ok(Built { fitted: r.params, loss: r.loss, evaluation })
}

/// Starting values for retry `attempt`: the proposer's θ⁰ first, then the
/// neutral defaults, then the defaults with non-level values halved.
fn init_for_attempt(s: &Suggestion, historical: &[f64], attempt: u32) -> ParamVector {
    let base = complete_init(&s.model, if attempt == 0 { s.init.as_ref() } else { None }, historical);
    if attempt < 2 {
        return base;
    }
    let level = historical.iter().sum::<f64>() / historical.len() as f64;
    let shrink = 0.5f64.powi(attempt as i32 - 1);
    base.iter().map(|(k, v)| (k.to_string(), if v == level { v } else { v * shrink })).collect()
}

/// Runs (or resumes) discovery until `config.iterations` records exist,
/// the pool is exhausted, or the proposer keeps failing. Each new record
/// is appended to `memory_path` when given.
pub fn run_discovery(
    historical: &PricePath,
    proposer: &mut dyn ModelProposer,
    agents: &Agents,
    config: &DiscoveryConfig,
    mut memory: DiscoveryMemory,
    memory_path: Option<&Path>,
) -> Result<DiscoveryMemory, DiscoveryError> {
    config.validate()?;
    if historical.len() < MIN_DISCOVERY_LEN {
        return Err(DiscoveryError::TooShort { need: MIN_DISCOVERY_LEN, got: historical.len() });
    }
    let hist_stats = summary_stats(&historical.closes).unwrap_or_default();
    memory.pool.retain(|s| !memory.records.iter().any(|r| r.model == s.model));

    while memory.iteration() < config.iterations {
        let iteration = memory.iteration() + 1;
        let next = if iteration == 1 {
            gbm().suggestion()
        } else {
            if !memory.records.is_empty() && !refill(proposer, &mut memory, &hist_stats, config)? {
                memory.loop_failed = true;
                break;
            }
            let idx = match agents
                .choose(&memory.digest(), &memory.pool.iter().map(|s| s.model.clone()).collect::<Vec<_>>())
            {
                Ok(Some(i)) if !memory.records.iter().any(|r| r.model == memory.pool[i].model) => Ok(i),
                _ => choose_next(&memory, &memory.pool),
            };
            match idx {
                Ok(i) => memory.pool.remove(i),
                Err(DiscoveryError::PoolExhausted) => {
                    memory.exhausted = true;
                    break;
                }
                Err(e) => return Err(e),
            }
        };
        let record = test_candidate(&next, historical, agents, config, &memory, iteration)?;
        memory.chosen.push(record.model.render());
        if let Some(p) = memory_path {
            DiscoveryMemory::append_jsonl(p, &record)?;
        }
        memory.records.push(record);
    }
    if !memory.records.iter().any(CandidateRecord::is_ok) {
        memory.loop_failed = true;
    }
    Ok(memory)
}

/// Asks the proposer for more candidates, retrying within the budget.
/// Returns false when every attempt failed.
fn refill(
    proposer: &mut dyn ModelProposer,
    memory: &mut DiscoveryMemory,
    hist_stats: &MetricReport,
    config: &DiscoveryConfig,
) -> Result<bool, DiscoveryError> {
    for _ in 0..config.retry_budget.max(1) {
        let ctx = ProposalContext { memory, historical_stats: hist_stats, count: config.suggestions_per_call };
        match proposer.propose(&ctx) {
            Ok(s) => {
                memory.extend_pool(s);
                return Ok(true);
            }
            Err(DiscoveryError::Agent(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(false)
}

fn test_candidate(
    s: &Suggestion,
    historical: &PricePath,
    agents: &Agents,
    config: &DiscoveryConfig,
    memory: &DiscoveryMemory,
    iteration: usize,
) -> Result<CandidateRecord, DiscoveryError> {
    let budget = config.retry_budget.max(1);
    let mut last_err = (CandidateStatus::ImplementFailed, String::new());
    let mut init = init_for_attempt(s, &historical.closes, 0);
    for attempt in 0..budget {
        init = init_for_attempt(s, &historical.closes, attempt);
        match build(&s.model, &init, historical, config, iteration) {
            Ok(b) => {
                let digest = CandidateDigest {
                    model: s.model.render(),
                    params: b.fitted.to_string(),
                    loss: b.loss,
                    metrics: b.evaluation.comparison.to_flat().into_iter().collect(),
                };
                let summary = agents.summarize(&digest)?;
                let tested: Vec<SdeModel> =
                    memory.records.iter().filter(|r| r.is_ok()).map(|r| r.model.clone()).collect();
                let novelty = agents.score_novelty(&s.model, &summary, &tested, &digest)?;
                let score = score_candidate(&b.evaluation.comparison, novelty, &config.weights);
                return Ok(CandidateRecord {
                    iteration,
                    model: s.model.clone(),
                    init,
                    fitted: Some(b.fitted),
                    loss: Some(b.loss),
                    evaluation: Some(b.evaluation),
                    novelty: Some(novelty),
                    score: Some(score),
                    summary,
                    status: CandidateStatus::Ok,
                    error: None,
                    attempts: attempt + 1,
                });
            }
            Err(e) => last_err = e,
        }
    }
    Ok(CandidateRecord {
        iteration,
        model: s.model.clone(),
        init,
        fitted: None,
        loss: None,
        evaluation: None,
        novelty: None,
        score: None,
        summary: String::new(),
        status: last_err.0,
        error: Some(last_err.1),
        attempts: budget,
    })
}

/// Similarity of every tested model to `target`.
pub fn similarities_to(memory: &DiscoveryMemory, target: &SdeModel) -> Vec<f64> {
    memory.records.iter().map(|r| model_similarity(&r.model, target)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::parse_model;

    fn cir_history(seed: u64) -> PricePath {
        let m = parse_model("dS = a*(b - S) dt + c*sqrt(S) dW").unwrap();
        let p: ParamVector = "a=0.5,b=100,c=1".parse().unwrap();
        let ens = simulate(&m, &p, &SimConfig { n_paths: 1, seed, ..SimConfig::default() }).unwrap();
        PricePath::from_closes(chrono::NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(), ens.path(0).to_vec()).unwrap()
    }

    fn self_consistent(seed: u64, iterations: usize) -> DiscoveryConfig {
        DiscoveryConfig {
            iterations,
            calib: CalibConfig { n_paths: 1, ..CalibConfig::default() },
            calib_seed: Some(seed),
            eval_paths: 16,
            ..DiscoveryConfig::default()
        }
    }

    fn record(iteration: usize, loss: f64, combined: u8) -> CandidateRecord {
        CandidateRecord {
            iteration,
            model: parse_model("dS = a*S dt + b*S dW").unwrap(),
            init: ParamVector::new(),
            fitted: Some(ParamVector::new()),
            loss: Some(loss),
            evaluation: None,
            novelty: Some(0),
            score: Some(score_parts(0, combined)),
            summary: String::new(),
            status: CandidateStatus::Ok,
            error: None,
            attempts: 1,
        }
    }

    #[test]
    fn best_model_rules() {
        let mut m = DiscoveryMemory {
            records: vec![record(1, 3.0, 10), record(2, 0.4, 10), record(3, 1.1, 10)],
            ..DiscoveryMemory::default()
        };
        assert_eq!(best_model(&m).unwrap().iteration, 2);
        m.records = vec![record(1, 0.4, 17), record(2, 0.4, 30)];
        assert_eq!(best_model(&m).unwrap().iteration, 2);
        m.records.iter_mut().for_each(|r| r.status = CandidateStatus::ImplementFailed);
        assert!(matches!(best_model(&m), Err(DiscoveryError::LoopFailed)));
    }

    #[test]
    fn choose_prefers_novel_structure() {
        let mut m = DiscoveryMemory::default();
        m.records.push(record(1, 1.0, 0));
        let same = Suggestion { model: parse_model("dS = a*S dt + b*S dW + S dJ").unwrap(), init: None };
        let novel = Suggestion { model: parse_model("dS = a dt + b dW").unwrap(), init: None };
        assert_eq!(choose_next(&m, &[same.clone(), novel]).unwrap(), 1);
        assert_eq!(choose_next(&m, &[same]).unwrap(), 0);
        let tested = Suggestion { model: parse_model("dS = a*S dt + b*S dW").unwrap(), init: None };
        assert!(matches!(choose_next(&m, &[tested]), Err(DiscoveryError::PoolExhausted)));
    }

    #[test]
    fn one_iteration_is_gbm() {
        let h = cir_history(3);
        let mem = run_discovery(
            &h,
            &mut OfflinePoolProposer::full(),
            &Agents::Mock,
            &self_consistent(3, 1),
            DiscoveryMemory::default(),
            None,
        )
        .unwrap();
        assert_eq!(mem.records.len(), 1);
        assert_eq!(mem.records[0].model, gbm().model);
        assert!(mem.records[0].is_ok());
    }

    struct Garbage;
    impl ModelProposer for Garbage {
        fn propose(&mut self, _: &ProposalContext<'_>) -> Result<Vec<Suggestion>, DiscoveryError> {
            let agents = Agents::Llm(crate::agents::LlmClient::new(
                std::sync::Arc::new(crate::agents::MockTransport::canned("dS = ((( dt")),
                "http://x",
                "m",
            ));
            LlmProposer { agents }.propose(&ProposalContext {
                memory: &DiscoveryMemory::default(),
                historical_stats: &MetricReport::default(),
                count: 1,
            })
        }
    }

    #[test]
    fn unparseable_proposals_fail_the_loop() {
        let h = cir_history(4);
        let mem =
            run_discovery(&h, &mut Garbage, &Agents::Mock, &self_consistent(4, 3), DiscoveryMemory::default(), None)
                .unwrap();
        assert!(mem.loop_failed);
        assert_eq!(mem.records.len(), 1);
    }

    #[test]
    fn cir_wins_the_benchmark_pool_and_resume_matches() {
        let h = cir_history(5);
        let cfg = self_consistent(5, 15);
        let mut p = OfflinePoolProposer::subset(BENCHMARK_POOL);
        let full = run_discovery(&h, &mut p, &Agents::Mock, &cfg, DiscoveryMemory::default(), None).unwrap();
        assert!(full.exhausted);
        assert_eq!(full.records.len(), 4);
        assert_eq!(best_model(&full).unwrap().model, parse_model("dS = a*(b - S) dt + c*sqrt(S) dW").unwrap());

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("memory.jsonl");
        let two = DiscoveryConfig { iterations: 2, ..cfg.clone() };
        run_discovery(&h, &mut p, &Agents::Mock, &two, DiscoveryMemory::default(), Some(&path)).unwrap();
        let loaded = DiscoveryMemory::load_jsonl(&path).unwrap();
        let resumed = run_discovery(&h, &mut p, &Agents::Mock, &cfg, loaded, Some(&path)).unwrap();
        assert_eq!(resumed.records, full.records);
        assert_eq!(DiscoveryMemory::load_jsonl(&path).unwrap().records, full.records);
    }
}
