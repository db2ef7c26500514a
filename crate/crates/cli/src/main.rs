//! `sdelab` command line: simulate, calibrate, discover, risk, backtest,
//! baseline, report and bench.

mod error;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sdelab::agents::{Agents, FixtureTransport, HttpTransport, LlmClient, ENV_ENDPOINT, ENV_MODEL};
use sdelab::backtest::{
    buy_and_hold, load_result_dir, plot_data, render_markdown, run_backtest, write_result_dir, BacktestResult,
    DecisionPolicy, PolicyBinding, RunStatus,
};
use sdelab::bench::{self, run_benchmark, GroundTruthSpec, TableWeights};
use sdelab::calib::{calibrate, default_init};
use sdelab::data::{load_news, load_prices, NewsStore, PricePath, RunConfig};
use sdelab::discovery::{
    best_model, run_discovery, DiscoveryMemory, LlmProposer, ModelProposer, OfflinePoolProposer, ProposerBinding,
    BENCHMARK_POOL,
};
use sdelab::risk::risk_report;
use sdelab::seed::derive_seed;
use sdelab::sim::EnsembleMeta;
use sdelab::trading::AccountingMode;
use sdelab::{parse_model, simulate, ParamVector, SdeModel};

use crate::error::{core, CliError, EXIT_CODES};

#[derive(Debug, Parser)]
#[command(name = "sdelab", version, about = "Symbolic SDE discovery, Monte Carlo risk and costed backtests", after_help = EXIT_CODES)]
struct Cli {
    /// Root seed; every component seed derives from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON run configuration (unknown keys are rejected).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Chat-completions endpoint for the agents.
    #[arg(long, global = true, env = ENV_ENDPOINT)]
    llm_endpoint: Option<String>,
    /// Model name sent to the endpoint.
    #[arg(long, global = true, env = ENV_MODEL)]
    llm_model: Option<String>,
    /// Discovery iterations [default: 15, or the config value].
    #[arg(long, global = true)]
    iterations: Option<usize>,
    /// Use the deterministic mock agents and the offline model pool; no
    /// network request is made.
    #[arg(long, global = true)]
    offline: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a model and write the ensemble as CSV (one row per path).
    Simulate {
        /// Model text, e.g. "dS = a*S dt + b*S dW".
        model: String,
        #[arg(long)]
        params: String,
        #[arg(long)]
        paths: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        s0: Option<f64>,
        #[arg(long)]
        dt: Option<f64>,
        /// Output CSV; a `.meta.json` sidecar is written next to it.
        #[arg(long, default_value = "ensemble.csv")]
        out: PathBuf,
    },
    /// Fit a model to a price history and print the result as JSON.
    Calibrate {
        model: String,
        #[command(flatten)]
        prices: PricesArg,
        /// Initial guess; defaults are derived from the data when omitted.
        #[arg(long)]
        init: Option<String>,
        #[arg(long)]
        paths: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the model discovery loop and persist its memory as JSONL.
    Discover {
        #[command(flatten)]
        prices: PricesArg,
        /// Memory file [default: memory.jsonl, or the config path].
        #[arg(long)]
        memory: Option<PathBuf>,
        /// Continue from an existing memory file.
        #[arg(long)]
        resume: bool,
        /// Restrict the offline pool to GBM, CIR, CEV and jump diffusion.
        #[arg(long)]
        benchmark_pool: bool,
    },
    /// Monte Carlo VaR, CVaR, drawdown and EVT tails for a fitted model.
    Risk {
        model: String,
        #[arg(long)]
        params: String,
        #[command(flatten)]
        prices: PricesArg,
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long)]
        paths: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Daily backtest with periodic discovery and daily recalibration.
    Backtest {
        #[command(flatten)]
        prices: PricesArg,
        #[arg(long)]
        news: Option<PathBuf>,
        #[arg(long, value_enum)]
        policy: Option<PolicyArg>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long)]
        symbol: Option<String>,
        /// Result directory.
        #[arg(long, default_value = "backtest-out")]
        out: PathBuf,
    },
    /// Buy-and-hold over the same trading window as `backtest`.
    Baseline {
        #[command(flatten)]
        prices: PricesArg,
        /// Start on the first row instead of after the lookback window.
        #[arg(long)]
        full: bool,
        #[arg(long, default_value = "baseline-out")]
        out: PathBuf,
    },
    /// Render a result directory to a markdown summary and plot-data CSVs.
    Report {
        dir: PathBuf,
        /// Where to write summary.md and the plot CSVs [default: DIR].
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Ground-truth recovery runs on CIR, CEV and jump diffusion.
    Bench {
        /// Runs per target.
        #[arg(long, default_value_t = 1)]
        runs: usize,
        /// Offer the whole model library instead of the four-model pool.
        #[arg(long)]
        full_pool: bool,
        #[arg(long, default_value = "bench-out")]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
struct PricesArg {
    /// Price CSV with a `date,close` header [default: the config path].
    #[arg(long)]
    prices: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PolicyArg {
    Rule,
    Llm,
    Hold,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    CostAware,
    Literal,
}

struct Ctx {
    cfg: RunConfig,
    seed: u64,
    agents: Agents,
    offline: bool,
}

impl Ctx {
    fn new(cli: &Cli) -> Result<Self, CliError> {
        let mut cfg = match &cli.config {
            Some(p) => RunConfig::load(p).map_err(core)?,
            None => RunConfig::default(),
        };
        let seed = cli.seed.or(cfg.seed).unwrap_or(0);
        if let Some(n) = cli.iterations {
            cfg.discovery.iterations = n;
        }
        cfg.validate().map_err(core)?;
        let agents = if cli.offline {
            Agents::Mock
        } else if let Some(dir) = &cfg.agents.fixtures {
            let client = LlmClient::new(Arc::new(FixtureTransport { dir: dir.clone() }), "fixtures", "fixtures");
            Agents::Llm(client)
        } else if let Some(endpoint) = cli.llm_endpoint.clone().or_else(|| cfg.agents.endpoint.clone()) {
            let model = cli.llm_model.clone().or_else(|| cfg.agents.model.clone()).unwrap_or_default();
            Agents::Llm(LlmClient::new(Arc::new(HttpTransport::from_env()), endpoint, model))
        } else {
            Agents::Mock
        };
        Ok(Self { cfg, seed, agents, offline: cli.offline })
    }

    fn prices(&self, arg: &PricesArg) -> Result<PricePath, CliError> {
        let path =
            arg.prices.clone().or_else(|| self.cfg.paths.prices.clone()).ok_or_else(|| {
                CliError::Usage("no price file: pass --prices or set paths.prices in the config".into())
            })?;
        load_prices(path).map_err(core)
    }

    fn proposer(&self, benchmark_pool: bool) -> Box<dyn ModelProposer> {
        let pool = || {
            if benchmark_pool {
                OfflinePoolProposer::subset(BENCHMARK_POOL)
            } else {
                OfflinePoolProposer::full()
            }
        };
        match (self.cfg.discovery.proposer, &self.agents) {
            (ProposerBinding::Agentic, Agents::Llm(_)) if !self.offline => {
                Box::new(LlmProposer { agents: self.agents.clone() })
            }
            _ => Box::new(pool()),
        }
    }
}

fn model_arg(text: &str) -> Result<SdeModel, CliError> {
    parse_model(text).map_err(core)
}

fn params_arg(text: &str) -> Result<ParamVector, CliError> {
    text.parse::<ParamVector>().map_err(core)
}

/// Writes to stdout; a closed pipe (`| head`) is not an error.
fn say(text: &str) {
    let mut out = std::io::stdout().lock();
    if out.write_all(text.as_bytes()).and_then(|()| out.flush()).is_err() {
        std::process::exit(0);
    }
}

fn write_file(path: &Path, content: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    }
    fs::write(path, content).map_err(CliError::io(path))
}

fn emit_json<T: serde::Serialize>(value: &T, out: Option<&Path>) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("serialisable output");
    match out {
        Some(p) => write_file(p, &(text + "\n")),
        None => {
            say(&(text + "\n"));
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let ctx = Ctx::new(&cli)?;
    match cli.command {
        Command::Simulate { model, params, paths, steps, s0, dt, out } => {
            let model = model_arg(&model)?;
            let params = params_arg(&params)?;
            let base = &ctx.cfg.sim;
            let sim = sdelab::SimConfig {
                n_paths: paths.unwrap_or(base.n_paths),
                steps: steps.unwrap_or(base.steps),
                s0: s0.unwrap_or(base.s0),
                dt: dt.unwrap_or(base.dt),
                seed: ctx.seed,
            };
            let ens = simulate(&model, &params, &sim).map_err(core)?;
            let mut buf = Vec::new();
            ens.write_csv(&mut buf).map_err(|e| CliError::Io { path: out.clone(), source: e.into() })?;
            write_file(&out, &String::from_utf8(buf).expect("csv is utf-8"))?;
            let meta = out.with_extension("meta.json");
            emit_json(&EnsembleMeta::new(&model, &params, &ens), Some(&meta))?;
            eprintln!("wrote {} paths x {} steps to {}", sim.n_paths, sim.steps, out.display());
        }
        Command::Calibrate { model, prices, init, paths, out } => {
            let model = model_arg(&model)?;
            let h = ctx.prices(&prices)?;
            let init = match init {
                Some(t) => params_arg(&t)?,
                None => default_init(&model, &h.closes),
            };
            let mut cfg = ctx.cfg.calib.clone();
            cfg.seed = derive_seed(ctx.seed, "calibrate");
            if let Some(n) = paths {
                cfg.n_paths = n;
            }
            let fit = calibrate(&model, &h, &init, &cfg).map_err(core)?;
            emit_json(&fit, out.as_deref())?;
        }
        Command::Discover { prices, memory, resume, benchmark_pool } => {
            let h = ctx.prices(&prices)?;
            let path = memory.or_else(|| ctx.cfg.paths.memory.clone()).unwrap_or_else(|| "memory.jsonl".into());
            let start = if resume && path.exists() {
                DiscoveryMemory::load_jsonl(&path).map_err(core)?
            } else {
                if path.exists() {
                    fs::remove_file(&path).map_err(CliError::io(&path))?;
                } else if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                    fs::create_dir_all(dir).map_err(CliError::io(dir))?;
                }
                DiscoveryMemory::default()
            };
            let config = sdelab::discovery::DiscoveryConfig { seed: ctx.seed, ..ctx.cfg.discovery.clone() };
            let mut proposer = ctx.proposer(benchmark_pool);
            let mem = run_discovery(&h, proposer.as_mut(), &ctx.agents, &config, start, Some(&path)).map_err(core)?;
            let best = best_model(&mem).map_err(core)?;
            say(&format!("records: {}\n", mem.records.len()));
            say(&format!("best: {}\n", best.model.render()));
            if let Some(p) = &best.fitted {
                say(&format!("params: {p}\n"));
            }
            if let Some(l) = best.loss {
                say(&format!("loss: {l:.6}\n"));
            }
            if mem.exhausted {
                say("pool exhausted before the iteration budget\n");
            }
            eprintln!("memory: {}", path.display());
        }
        Command::Risk { model, params, prices, horizon, paths, alpha, out } => {
            let model = model_arg(&model)?;
            let params = params_arg(&params)?;
            let h = ctx.prices(&prices)?;
            let mut cfg = ctx.cfg.risk.clone();
            cfg.seed = derive_seed(ctx.seed, "risk");
            cfg.horizon = horizon.unwrap_or(cfg.horizon);
            cfg.n_paths = paths.unwrap_or(cfg.n_paths);
            cfg.alpha = alpha.unwrap_or(cfg.alpha);
            let rep = risk_report(&model, &params, &h, &cfg).map_err(core)?;
            emit_json(&rep, out.as_deref())?;
        }
        Command::Backtest { prices, news, policy, mode, symbol, out } => {
            let h = ctx.prices(&prices)?;
            let news = match news.or_else(|| ctx.cfg.paths.news.clone()) {
                Some(p) => load_news(p).map_err(core)?,
                None => NewsStore::new(Vec::new()),
            };
            let mut config = ctx.cfg.backtest.clone();
            config.seed = ctx.seed;
            if let Some(p) = policy {
                config.policy = match p {
                    PolicyArg::Rule => PolicyBinding::Rule,
                    PolicyArg::Llm => PolicyBinding::Llm,
                    PolicyArg::Hold => PolicyBinding::Hold,
                };
            }
            if let Some(m) = mode {
                config.mode = match m {
                    ModeArg::CostAware => AccountingMode::CostAware,
                    ModeArg::Literal => AccountingMode::Literal,
                };
            }
            if let Some(s) = symbol {
                config.symbol = s;
            }
            config.validate().map_err(core)?;
            let policy = DecisionPolicy::from_binding(config.policy, config.rule, &ctx.agents);
            let mut proposer = ctx.proposer(false);
            let res = run_backtest(&h, &news, &config, proposer.as_mut(), &policy, &ctx.agents).map_err(core)?;
            finish_run(&res, &out)?;
        }
        Command::Baseline { prices, full, out } => {
            let h = ctx.prices(&prices)?;
            let config = &ctx.cfg.backtest;
            let from = if full { 0 } else { config.lookback.min(h.len().saturating_sub(1)) };
            let res = buy_and_hold(&h.slice(from..h.len()), config).map_err(core)?;
            finish_run(&res, &out)?;
        }
        Command::Report { dir, out } => {
            let res = load_result_dir(&dir).map_err(core)?;
            let out = out.unwrap_or(dir);
            let md = render_markdown(&res);
            write_file(&out.join("summary.md"), &md)?;
            for (name, body) in plot_data(&res) {
                write_file(&out.join(name), &body)?;
            }
            say(&md);
        }
        Command::Bench { runs, full_pool, out } => {
            let config = sdelab::discovery::DiscoveryConfig { seed: ctx.seed, ..ctx.cfg.discovery.clone() };
            let mut reports = Vec::new();
            for mut spec in GroundTruthSpec::standard_targets() {
                spec.runs = runs;
                let mut proposer = ctx.proposer(!full_pool);
                let name = if ctx.agents.is_mock() { "offline" } else { "llm" };
                let rep = run_benchmark(&spec, proposer.as_mut(), name, &ctx.agents, &config, TableWeights::default())
                    .map_err(core)?;
                reports.push(rep);
            }
            let md = bench::render_markdown(&reports);
            write_file(&out.join("table.md"), &md)?;
            write_file(&out.join("table.csv"), &bench::render_csv(&reports))?;
            emit_json(&reports, Some(&out.join("reports.json")))?;
            say(&md);
        }
    }
    Ok(())
}

fn finish_run(res: &BacktestResult, out: &Path) -> Result<(), CliError> {
    write_result_dir(res, out).map_err(core)?;
    let md = render_markdown(res);
    say(&md);
    eprintln!("results: {}", out.display());
    match res.status {
        RunStatus::Completed => Ok(()),
        RunStatus::Failed => Err(CliError::RunFailed(res.failure.clone().unwrap_or_default())),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
