//! Daily trading pipeline: block-wise model discovery, daily
//! recalibration, risk and trend reports, news sentiment, a decision and
//! the accounting step. Also the buy-and-hold baseline, the result
//! directory format and an independent ledger replay.

use std::cell::Cell;
use std::fmt::Write as _;
use std::path::Path;

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::agents::{AgentError, Agents, TraderContext};
use crate::calib::{calibrate, CalibConfig, MIN_CALIB_LEN};
use crate::data::{NewsItem, NewsStore, PricePath};
use crate::discovery::{
    best_model, run_discovery, CandidateRecord, DiscoveryConfig, DiscoveryError, DiscoveryMemory, ModelProposer,
    MIN_DISCOVERY_LEN,
};
use crate::dsl::SdeModel;
use crate::params::ParamVector;
use crate::risk::{risk_report, RiskConfig, RiskReport};
use crate::seed::derive_seed;
use crate::trading::{
    apply_signal, performance, rule_policy, trend_report, AccountingMode, Performance, PortfolioState,
    RulePolicyConfig, Stance, TradeSignal, TradingError, TrendReport, DEFAULT_KAPPA, RSI_LOOKBACK,
};

pub const DECISIONS_HEADER: &str =
    "date,signal,price,cash,position,equity,rsi,drift,var,cvar,evt_var,evt_cvar,mdd,stance";

#[derive(Debug, thiserror::Error)]
pub enum BacktestError {
    #[error("need at least {need} prices, got {got}")]
    InsufficientHistory { need: usize, got: usize },
    #[error("invalid backtest config: {0}")]
    InvalidConfig(String),
    #[error("lookahead on day {day}: requested index {requested}")]
    Lookahead { day: usize, requested: usize },
    #[error("{path}: {msg}")]
    ResultDir { path: String, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Discovery(#[from] DiscoveryError),
    #[error(transparent)]
    Trading(#[from] TradingError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyBinding {
    #[default]
    Rule,
    Llm,
    /// Buys on the first trading day and holds.
    Hold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BacktestConfig {
    pub symbol: String,
    /// Trailing trading days used for discovery.
    pub lookback: usize,
    /// Trailing trading days used for daily recalibration.
    pub recal_window: usize,
    /// Trading days per discovery block.
    pub block: usize,
    /// Calendar days of news fed to the analyst.
    pub news_days: i64,
    pub kappa: f64,
    pub initial_cash: f64,
    pub risk_free: f64,
    pub seed: u64,
    pub policy: PolicyBinding,
    pub mode: AccountingMode,
    /// Run discovery, recalibration and risk even for policies that do not
    /// read them.
    pub analyze: bool,
    pub discovery: DiscoveryConfig,
    pub calib: CalibConfig,
    pub risk: RiskConfig,
    pub rule: RulePolicyConfig,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self {
            symbol: "ASSET".into(),
            lookback: 126,
            recal_window: 100,
            block: 20,
            news_days: 5,
            kappa: DEFAULT_KAPPA,
            initial_cash: 1000.0,
            risk_free: 0.0,
            seed: 0,
            policy: PolicyBinding::Rule,
            mode: AccountingMode::CostAware,
            analyze: true,
            discovery: DiscoveryConfig::default(),
            calib: CalibConfig { max_iters: 50, ..CalibConfig::default() },
            risk: RiskConfig { n_paths: 2000, ..RiskConfig::default() },
            rule: RulePolicyConfig::default(),
        }
    }
}

impl BacktestConfig {
    pub fn validate(&self) -> Result<(), BacktestError> {
        let bad = |m: String| Err(BacktestError::InvalidConfig(m));
        if self.lookback == 0 || self.recal_window == 0 || self.block == 0 || self.news_days < 0 {
            return bad("all windows must be at least 1".into());
        }
        if !(self.initial_cash > 0.0) {
            return bad(format!("initial cash must be positive, got {}", self.initial_cash));
        }
        if !(self.kappa >= 0.0 && self.kappa < 1.0) {
            return bad(format!("kappa must lie in [0, 1), got {}", self.kappa));
        }
        if self.analyze {
            if self.lookback < MIN_DISCOVERY_LEN {
                return bad(format!("lookback must be at least {MIN_DISCOVERY_LEN} when analysing"));
            }
            if self.recal_window < MIN_CALIB_LEN || self.recal_window > self.lookback + 1 {
                return bad(format!("recal_window must lie in [{MIN_CALIB_LEN}, lookback + 1]"));
            }
            self.discovery.validate()?;
            self.calib.validate().map_err(|e| BacktestError::InvalidConfig(e.to_string()))?;
            self.risk.validate().map_err(|e| BacktestError::InvalidConfig(e.to_string()))?;
        } else if self.policy != PolicyBinding::Hold {
            return bad("policies other than hold need analyze = true".into());
        }
        Ok(())
    }
}

/// Read-only market access sealed at one day. Anything dated after
/// `today` is refused, and the furthest index read is recorded so runs
/// can be audited.
pub struct MarketView<'a> {
    prices: &'a PricePath,
    news: &'a NewsStore,
    today: usize,
    max_read: Cell<usize>,
}

impl<'a> MarketView<'a> {
    pub fn new(prices: &'a PricePath, news: &'a NewsStore, today: usize) -> Self {
        Self { prices, news, today, max_read: Cell::new(0) }
    }

    pub fn today(&self) -> usize {
        self.today
    }

    pub fn date(&self) -> NaiveDate {
        self.prices.dates[self.today]
    }

    pub fn price(&self, index: usize) -> Result<f64, BacktestError> {
        if index > self.today || index >= self.prices.len() {
            return Err(BacktestError::Lookahead { day: self.today, requested: index });
        }
        self.max_read.set(self.max_read.get().max(index));
        Ok(self.prices.closes[index])
    }

    /// The last `len` closes up to and including today (fewer near the
    /// start of the data).
    pub fn trailing(&self, len: usize) -> PricePath {
        let from = (self.today + 1).saturating_sub(len);
        self.max_read.set(self.max_read.get().max(self.today));
        self.prices.slice(from..self.today + 1)
    }

    /// News for `symbol` dated within the last `days` calendar days.
    pub fn news(&self, symbol: &str, days: i64) -> Vec<NewsItem> {
        let to = self.date();
        self.news.query(symbol, to - Duration::days(days), to)
    }

    pub fn max_index_read(&self) -> usize {
        self.max_read.get()
    }
}

/// How each day's signal is produced.
#[derive(Debug, Clone)]
pub enum DecisionPolicy {
    Rule(RulePolicyConfig),
    /// The trader agent; the mock trader applies the rule policy.
    Agent(Agents),
    /// Fixed signals by trading day; hold once the script runs out.
    Scripted(Vec<TradeSignal>),
    BuyThenHold,
}

impl DecisionPolicy {
    pub fn from_binding(binding: PolicyBinding, rule: RulePolicyConfig, agents: &Agents) -> Self {
        match binding {
            PolicyBinding::Rule => DecisionPolicy::Rule(rule),
            PolicyBinding::Llm => DecisionPolicy::Agent(agents.clone()),
            PolicyBinding::Hold => DecisionPolicy::BuyThenHold,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Completed,
    Failed,
}

/// One trading day as executed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub date: NaiveDate,
    /// Signal as executed; a buy without cash or a sell without position
    /// is recorded as hold.
    pub signal: TradeSignal,
    pub requested: TradeSignal,
    pub price: f64,
    pub cash: f64,
    pub position: f64,
    pub equity: f64,
    pub cost: f64,
    pub model: Option<String>,
    pub params: Option<ParamVector>,
    pub recalibrated: bool,
    pub trend: Option<TrendReport>,
    pub risk: Option<RiskSnapshot>,
    pub stance: Stance,
    pub undecidable: bool,
}

/// The scalar part of a [`RiskReport`] kept in the decision log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskSnapshot {
    pub var: f64,
    pub cvar: f64,
    pub mdd: f64,
    pub evt_var: Option<f64>,
    pub evt_cvar: Option<f64>,
}

impl From<&RiskReport> for RiskSnapshot {
    fn from(r: &RiskReport) -> Self {
        Self { var: r.var, cvar: r.cvar, mdd: r.mdd, evt_var: r.evt_var, evt_cvar: r.evt_cvar }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockRecord {
    pub block: usize,
    #[serde(flatten)]
    pub record: CandidateRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestResult {
    pub status: RunStatus,
    pub failure: Option<String>,
    pub symbol: String,
    /// Close dated with each equity point; the first point is the close
    /// before trading starts (or the first trading close).
    pub dates: Vec<NaiveDate>,
    /// Length is the number of trading days plus one.
    pub equity: Vec<f64>,
    pub decisions: Vec<DecisionRecord>,
    pub performance: Option<Performance>,
    pub final_state: PortfolioState,
    pub initial_cash: f64,
    pub kappa: f64,
    pub mode: AccountingMode,
    /// Best model per discovery block.
    pub block_models: Vec<String>,
    pub memory: Vec<BlockRecord>,
    /// Largest price index read on each trading day, relative to that day.
    pub lookahead_ok: bool,
    pub config: Option<BacktestConfig>,
}

impl BacktestResult {
    pub fn pnl(&self) -> Option<f64> {
        self.performance.map(|p| p.pnl)
    }
}

struct Ledger {
    state: PortfolioState,
    equity: Vec<f64>,
    dates: Vec<NaiveDate>,
    decisions: Vec<DecisionRecord>,
}

impl Ledger {
    fn new(cash: f64, first_date: NaiveDate) -> Self {
        Self { state: PortfolioState::new(cash), equity: vec![cash], dates: vec![first_date], decisions: Vec::new() }
    }

    fn step(
        &mut self,
        date: NaiveDate,
        requested: TradeSignal,
        price: f64,
        kappa: f64,
        mode: AccountingMode,
    ) -> Result<(TradeSignal, f64), TradingError> {
        let before = self.state.total_costs;
        self.state = apply_signal(self.state, requested, price, kappa, mode)?;
        self.equity.push(self.state.equity(price));
        self.dates.push(date);
        Ok((self.state.last_signal, self.state.total_costs - before))
    }
}

/// State carried across days inside the trading loop.
struct Fit {
    model: SdeModel,
    params: ParamVector,
}

/// Runs the pipeline over `prices[lookback..]`. Discovery failures and
/// agent failures end the run with status `Failed`; the days traded so far
/// are kept for inspection but carry no performance figures.
pub fn run_backtest(
    prices: &PricePath,
    news: &NewsStore,
    config: &BacktestConfig,
    proposer: &mut dyn ModelProposer,
    policy: &DecisionPolicy,
    agents: &Agents,
) -> Result<BacktestResult, BacktestError> {
    config.validate()?;
    if matches!(policy, DecisionPolicy::Rule(_) | DecisionPolicy::Agent(_)) && !config.analyze {
        return Err(BacktestError::InvalidConfig("this policy needs analyze = true".into()));
    }
    let need = config.lookback + config.block;
    if prices.len() < need {
        return Err(BacktestError::InsufficientHistory { need, got: prices.len() });
    }
    let start = config.lookback;
    let mut ledger = Ledger::new(config.initial_cash, prices.dates[start - 1]);
    let mut memory_log = Vec::new();
    let mut block_models = Vec::new();
    let mut fit: Option<Fit> = None;
    let mut lookahead_ok = true;
    let mut failure = None;

    'days: for day in start..prices.len() {
        let offset = day - start;
        let view = MarketView::new(prices, news, day);
        let date = view.date();
        let price = view.price(day)?;

        if config.analyze && offset.is_multiple_of(config.block) {
            let block = offset / config.block;
            match discover_block(&view, config, proposer, agents, block) {
                Ok((best, records)) => {
                    block_models.push(best.model.render());
                    memory_log.extend(records.into_iter().map(|record| BlockRecord { block, record }));
                    fit = Some(best);
                }
                Err(msg) => {
                    failure = Some(format!("discovery failed in block {block}: {msg}"));
                    break 'days;
                }
            }
        }

        let mut record_model = None;
        let mut recalibrated = false;
        let (mut trend, mut risk) = (None, None);
        if let Some(f) = fit.as_mut() {
            let window = view.trailing(config.recal_window);
            let calib = CalibConfig {
                seed: derive_seed(config.seed, &format!("backtest/day{day}/calib")),
                ..config.calib.clone()
            };
            if let Ok(r) = calibrate(&f.model, &window, &f.params, &calib) {
                if !r.diverged && r.loss.is_finite() {
                    f.params = r.params;
                    recalibrated = true;
                }
            }
            let t = (window.len() - 1) as f64 * config.calib.dt;
            trend = trend_report(&window.closes, &f.model, &f.params, t, RSI_LOOKBACK.min(window.len() - 1)).ok();
            let risk_cfg = RiskConfig {
                seed: derive_seed(config.seed, &format!("backtest/day{day}/risk")),
                ..config.risk.clone()
            };
            risk = risk_report(&f.model, &f.params, &window, &risk_cfg).ok();
            record_model = Some((f.model.render(), f.params.clone()));
        }

        let items = view.news(&config.symbol, config.news_days);
        let analysis = match agents.analyze_news(&config.symbol, &date.to_string(), &items) {
            Ok(a) => a,
            Err(e) => {
                failure = Some(format!("news analysis on {date}: {e}"));
                break 'days;
            }
        };

        let mut undecidable = false;
        let requested = match policy {
            DecisionPolicy::BuyThenHold => {
                if offset == 0 {
                    TradeSignal::Buy
                } else {
                    TradeSignal::Hold
                }
            }
            DecisionPolicy::Scripted(s) => s.get(offset).copied().unwrap_or(TradeSignal::Hold),
            DecisionPolicy::Rule(rule) => match (&risk, &trend) {
                (Some(r), Some(t)) => rule_policy(r, t, analysis.stance, price, rule),
                _ => TradeSignal::Hold,
            },
            DecisionPolicy::Agent(trader) => {
                let ctx = TraderContext {
                    date: date.to_string(),
                    symbol: config.symbol.clone(),
                    price,
                    model: record_model.as_ref().map_or_else(String::new, |(m, _)| m.clone()),
                    horizon: config.risk.horizon,
                    risk: risk.clone(),
                    trend,
                    news: analysis.clone(),
                };
                match trader.trade(&ctx, &config.rule) {
                    Ok(reply) => {
                        undecidable = reply.undecidable;
                        reply.signal
                    }
                    Err(e) => {
                        failure = Some(format!("trader on {date}: {e}"));
                        break 'days;
                    }
                }
            }
        };

        let (signal, cost) = ledger.step(date, requested, price, config.kappa, config.mode)?;
        lookahead_ok &= view.max_index_read() <= day;
        let (model, params) = record_model.map_or((None, None), |(m, p)| (Some(m), Some(p)));
        ledger.decisions.push(DecisionRecord {
            date,
            signal,
            requested,
            price,
            cash: ledger.state.cash,
            position: ledger.state.position,
            equity: *ledger.equity.last().expect("equity starts non-empty"),
            cost,
            model,
            params,
            recalibrated,
            trend,
            risk: risk.as_ref().map(RiskSnapshot::from),
            stance: analysis.stance,
            undecidable,
        });
    }

    let status = if failure.is_some() { RunStatus::Failed } else { RunStatus::Completed };
    let perf = match status {
        RunStatus::Completed => Some(performance(&ledger.equity, config.risk_free)?),
        RunStatus::Failed => None,
    };
    Ok(BacktestResult {
        status,
        failure,
        symbol: config.symbol.clone(),
        dates: ledger.dates,
        equity: ledger.equity,
        decisions: ledger.decisions,
        performance: perf,
        final_state: ledger.state,
        initial_cash: config.initial_cash,
        kappa: config.kappa,
        mode: config.mode,
        block_models,
        memory: memory_log,
        lookahead_ok,
        config: Some(config.clone()),
    })
}

fn discover_block(
    view: &MarketView<'_>,
    config: &BacktestConfig,
    proposer: &mut dyn ModelProposer,
    agents: &Agents,
    block: usize,
) -> Result<(Fit, Vec<CandidateRecord>), String> {
    let history = view.trailing(config.lookback);
    let dcfg = DiscoveryConfig {
        seed: derive_seed(config.seed, &format!("backtest/block{block}/discovery")),
        ..config.discovery.clone()
    };
    let memory = run_discovery(&history, proposer, agents, &dcfg, DiscoveryMemory::default(), None)
        .map_err(|e| e.to_string())?;
    if memory.loop_failed {
        return Err("discovery loop failed".into());
    }
    let best = best_model(&memory).map_err(|e| e.to_string())?;
    let fit = Fit { model: best.model.clone(), params: best.fitted.clone().expect("ok records carry a fit") };
    Ok((fit, memory.records))
}

/// Buys on the first day with all cash (cost-aware) and marks to market
/// daily. The equity curve starts with the initial cash.
pub fn buy_and_hold(prices: &PricePath, config: &BacktestConfig) -> Result<BacktestResult, BacktestError> {
    if prices.len() < 2 {
        return Err(BacktestError::InsufficientHistory { need: 2, got: prices.len() });
    }
    if !(config.initial_cash > 0.0) {
        return Err(BacktestError::InvalidConfig("initial cash must be positive".into()));
    }
    let mut ledger = Ledger::new(config.initial_cash, prices.dates[0]);
    for (i, (&date, &price)) in prices.dates.iter().zip(&prices.closes).enumerate() {
        let requested = if i == 0 { TradeSignal::Buy } else { TradeSignal::Hold };
        let (signal, cost) = ledger.step(date, requested, price, config.kappa, AccountingMode::CostAware)?;
        ledger.decisions.push(DecisionRecord {
            date,
            signal,
            requested,
            price,
            cash: ledger.state.cash,
            position: ledger.state.position,
            equity: *ledger.equity.last().expect("non-empty"),
            cost,
            model: None,
            params: None,
            recalibrated: false,
            trend: None,
            risk: None,
            stance: Stance::Mixed,
            undecidable: false,
        });
    }
    let perf = performance(&ledger.equity, config.risk_free)?;
    Ok(BacktestResult {
        status: RunStatus::Completed,
        failure: None,
        symbol: config.symbol.clone(),
        dates: ledger.dates,
        equity: ledger.equity,
        decisions: ledger.decisions,
        performance: Some(perf),
        final_state: ledger.state,
        initial_cash: config.initial_cash,
        kappa: config.kappa,
        mode: AccountingMode::CostAware,
        block_models: Vec::new(),
        memory: Vec::new(),
        lookahead_ok: true,
        config: None,
    })
}

/// Outcome of replaying the decision log trade by trade.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LedgerCheck {
    pub realized: f64,
    pub unrealized: f64,
    pub costs: f64,
    /// Initial cash plus gains minus costs.
    pub expected_equity: f64,
    pub reported_equity: f64,
}

impl LedgerCheck {
    pub fn error(&self) -> f64 {
        (self.expected_equity - self.reported_equity).abs()
    }
}

/// Rebuilds the final equity from the executed trades alone: every
/// round trip contributes its price gain on the shares held, every trade
/// its fee, and an open position its mark-to-market gain.
pub fn replay_ledger(result: &BacktestResult) -> LedgerCheck {
    let kappa = result.kappa;
    let (mut cash, mut shares, mut basis) = (result.initial_cash, 0.0, 0.0);
    let (mut realized, mut costs) = (0.0, 0.0);
    for d in &result.decisions {
        match d.signal {
            TradeSignal::Buy => {
                let (bought, fee) = match result.mode {
                    AccountingMode::CostAware => {
                        let fee = cash * kappa / (1.0 + kappa);
                        ((cash - fee) / d.price, fee)
                    }
                    AccountingMode::Literal => (cash / d.price, kappa * cash),
                };
                costs += fee;
                // Literal accounting leaves the fee as negative cash.
                cash = match result.mode {
                    AccountingMode::CostAware => 0.0,
                    AccountingMode::Literal => -fee,
                };
                shares += bought;
                basis = d.price;
            }
            TradeSignal::Sell => {
                let fee = kappa * shares * d.price;
                realized += shares * (d.price - basis);
                costs += fee;
                cash += shares * d.price - fee;
                shares = 0.0;
            }
            TradeSignal::Hold => {}
        }
    }
    let last = result.decisions.last().map_or(0.0, |d| d.price);
    let unrealized = shares * (last - basis);
    LedgerCheck {
        realized,
        unrealized,
        costs,
        expected_equity: result.initial_cash + realized + unrealized - costs,
        reported_equity: *result.equity.last().unwrap_or(&result.initial_cash),
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// Decision log in the documented column order.
pub fn decisions_csv(result: &BacktestResult) -> String {
    let mut out = String::from(DECISIONS_HEADER);
    out.push('\n');
    for d in &result.decisions {
        let r = d.risk.as_ref();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            d.date,
            d.signal,
            d.price,
            d.cash,
            d.position,
            d.equity,
            opt(d.trend.map(|t| t.rsi)),
            opt(d.trend.map(|t| t.drift)),
            opt(r.map(|r| r.var)),
            opt(r.map(|r| r.cvar)),
            opt(r.and_then(|r| r.evt_var)),
            opt(r.and_then(|r| r.evt_cvar)),
            opt(r.map(|r| r.mdd)),
            d.stance,
        );
    }
    out
}

pub fn equity_csv(result: &BacktestResult) -> String {
    let mut out = String::from("step,date,equity\n");
    for (i, (d, e)) in result.dates.iter().zip(&result.equity).enumerate() {
        let _ = writeln!(out, "{i},{d},{e}");
    }
    out
}

/// Writes `result.json`, `equity.csv`, `decisions.csv` and
/// `memory.jsonl` into `dir`.
pub fn write_result_dir(result: &BacktestResult, dir: &Path) -> Result<(), BacktestError> {
    std::fs::create_dir_all(dir)?;
    let json = serde_json::to_string_pretty(result)
        .map_err(|e| BacktestError::ResultDir { path: dir.display().to_string(), msg: e.to_string() })?;
    std::fs::write(dir.join("result.json"), json)?;
    std::fs::write(dir.join("equity.csv"), equity_csv(result))?;
    std::fs::write(dir.join("decisions.csv"), decisions_csv(result))?;
    let mut mem = String::new();
    for r in &result.memory {
        let line = serde_json::to_string(r)
            .map_err(|e| BacktestError::ResultDir { path: dir.display().to_string(), msg: e.to_string() })?;
        mem.push_str(&line);
        mem.push('\n');
    }
    std::fs::write(dir.join("memory.jsonl"), mem)?;
    Ok(())
}

pub fn load_result_dir(dir: &Path) -> Result<BacktestResult, BacktestError> {
    let path = dir.join("result.json");
    let text = std::fs::read_to_string(&path)?;
    serde_json::from_str(&text)
        .map_err(|e| BacktestError::ResultDir { path: path.display().to_string(), msg: e.to_string() })
}

fn fmt_perf(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "--".to_string(), |x| format!("{x:.digits$}"))
}

/// Markdown summary of a result.
pub fn render_markdown(result: &BacktestResult) -> String {
    let p = result.performance;
    let trades = |s: TradeSignal| result.decisions.iter().filter(|d| d.signal == s).count();
    let mut out = String::new();
    let _ = writeln!(out, "# Backtest: {}\n", result.symbol);
    let _ = writeln!(out, "| Status | PnL | Sharpe | MDD | Buys | Sells | Days |");
    let _ = writeln!(out, "|---|---|---|---|---|---|---|");
    let status = match result.status {
        RunStatus::Completed => "completed",
        RunStatus::Failed => "failed",
    };
    let _ = writeln!(
        out,
        "| {status} | {} | {} | {} | {} | {} | {} |",
        fmt_perf(p.map(|p| p.pnl), 2),
        fmt_perf(p.map(|p| p.sharpe), 3),
        fmt_perf(p.map(|p| p.mdd), 4),
        trades(TradeSignal::Buy),
        trades(TradeSignal::Sell),
        result.decisions.len(),
    );
    if let Some(f) = &result.failure {
        let _ = writeln!(out, "\nFailure: {f}");
    }
    let _ = writeln!(
        out,
        "\nInitial cash {:.2}, final equity {:.4}, fees paid {:.4}, kappa {}.",
        result.initial_cash,
        result.equity.last().copied().unwrap_or(result.initial_cash),
        result.final_state.total_costs,
        result.kappa,
    );
    if let Some(c) = &result.config {
        let _ = writeln!(
            out,
            "Lookback {} days, recalibration window {} days, blocks of {} days, news lookback {} days.",
            c.lookback, c.recal_window, c.block, c.news_days
        );
    }
    if !result.block_models.is_empty() {
        let _ = writeln!(out, "\n## Models by block\n");
        for (i, m) in result.block_models.iter().enumerate() {
            let _ = writeln!(out, "{}. `{m}`", i + 1);
        }
    }
    out
}

/// Plot-ready CSVs: `(file name, contents)`.
pub fn plot_data(result: &BacktestResult) -> Vec<(String, String)> {
    let mut curve = String::from("date,price,equity,normalized_price,normalized_equity,drawdown\n");
    let p0 = result.decisions.first().map_or(1.0, |d| d.price);
    let mut peak = f64::MIN;
    for d in &result.decisions {
        peak = peak.max(d.equity);
        let _ = writeln!(
            curve,
            "{},{},{},{},{},{}",
            d.date,
            d.price,
            d.equity,
            d.price / p0,
            d.equity / result.initial_cash,
            (peak - d.equity) / peak
        );
    }
    let mut trades = String::from("date,signal,price\n");
    for d in result.decisions.iter().filter(|d| d.signal != TradeSignal::Hold) {
        let _ = writeln!(trades, "{},{},{}", d.date, d.signal, d.price);
    }
    vec![("plot_equity.csv".into(), curve), ("plot_trades.csv".into(), trades)]
}

impl From<AgentError> for BacktestError {
    fn from(e: AgentError) -> Self {
        BacktestError::Discovery(DiscoveryError::Agent(e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discovery::{OfflinePoolProposer, ProposalContext};
    use crate::dsl::Suggestion;

    fn path(closes: &[f64]) -> PricePath {
        PricePath::from_closes(NaiveDate::from_ymd_opt(2024, 1, 2).unwrap(), closes.to_vec()).unwrap()
    }

    fn quiet() -> BacktestConfig {
        BacktestConfig {
            analyze: false,
            policy: PolicyBinding::Hold,
            lookback: 1,
            block: 3,
            ..BacktestConfig::default()
        }
    }

    #[test]
    fn three_day_scripted_ledger() {
        let prices = path(&[100.0, 100.0, 105.0, 110.0]);
        let script = DecisionPolicy::Scripted(vec![TradeSignal::Buy, TradeSignal::Hold, TradeSignal::Sell]);
        let r = run_backtest(
            &prices,
            &NewsStore::default(),
            &quiet(),
            &mut OfflinePoolProposer::full(),
            &script,
            &Agents::Mock,
        )
        .unwrap();
        assert_eq!(r.equity.len(), 4);
        let shares = 1000.0 / (100.0 * (1.0 + DEFAULT_KAPPA));
        let expected = shares * 110.0 * (1.0 - DEFAULT_KAPPA);
        assert!((r.equity[3] - expected).abs() < 1e-9);
        assert!(replay_ledger(&r).error() < 1e-9);
        assert_eq!(r.final_state.position, 0.0);
    }

    #[test]
    fn replay_balances_repeated_round_trips() {
        use TradeSignal::{Buy, Hold, Sell};
        let prices = path(&[100.0, 100.0, 104.0, 97.0, 99.0, 103.0, 101.0, 108.0]);
        let script = DecisionPolicy::Scripted(vec![Buy, Sell, Buy, Hold, Sell, Buy, Hold]);
        for mode in [AccountingMode::CostAware, AccountingMode::Literal] {
            let cfg = BacktestConfig { block: 7, mode, ..quiet() };
            let r = run_backtest(
                &prices,
                &NewsStore::default(),
                &cfg,
                &mut OfflinePoolProposer::full(),
                &script,
                &Agents::Mock,
            )
            .unwrap();
            assert!(replay_ledger(&r).error() < 1e-9, "{mode:?}");
        }
    }

    #[test]
    fn hold_policy_matches_buy_and_hold() {
        let closes: Vec<f64> = (0..30).map(|i| 100.0 + (f64::from(i) * 0.7).sin() * 5.0).collect();
        let prices = path(&closes);
        let cfg = BacktestConfig { lookback: 5, block: 10, ..quiet() };
        let r = run_backtest(
            &prices,
            &NewsStore::default(),
            &cfg,
            &mut OfflinePoolProposer::full(),
            &DecisionPolicy::BuyThenHold,
            &Agents::Mock,
        )
        .unwrap();
        let bh = buy_and_hold(&prices.slice(5..30), &cfg).unwrap();
        assert_eq!(r.equity, bh.equity);
    }

    #[test]
    fn buy_and_hold_examples() {
        let flat = buy_and_hold(&path(&[50.0; 10]), &BacktestConfig::default()).unwrap();
        let perf = flat.performance.unwrap();
        assert!((perf.pnl + 1000.0 * DEFAULT_KAPPA / (1.0 + DEFAULT_KAPPA)).abs() < 1e-9);
        assert!(perf.mdd < 1e-3);
        let double = buy_and_hold(&path(&[10.0, 15.0, 20.0]), &BacktestConfig::default()).unwrap();
        assert!((double.equity[3] - 2000.0 / (1.0 + DEFAULT_KAPPA)).abs() < 1e-9);
        assert!(buy_and_hold(&path(&[10.0]), &BacktestConfig::default()).is_err());
    }

    #[test]
    fn market_view_refuses_the_future() {
        let prices = path(&[1.0, 2.0, 3.0, 4.0]);
        let news = NewsStore::default();
        let v = MarketView::new(&prices, &news, 1);
        assert_eq!(v.price(1).unwrap(), 2.0);
        assert!(matches!(v.price(2), Err(BacktestError::Lookahead { day: 1, requested: 2 })));
        assert_eq!(v.trailing(10).closes, vec![1.0, 2.0]);
        assert_eq!(v.max_index_read(), 1);
    }

    struct Failing;
    impl ModelProposer for Failing {
        fn propose(&mut self, _: &ProposalContext<'_>) -> Result<Vec<Suggestion>, DiscoveryError> {
            Err(DiscoveryError::Agent(AgentError::Undecidable))
        }
    }

    #[test]
    fn failing_gbm_block_fails_the_run() {
        let prices = path(&vec![100.0; 90]);
        let cfg = BacktestConfig {
            lookback: 60,
            recal_window: 30,
            block: 10,
            discovery: DiscoveryConfig { iterations: 2, retry_budget: 1, ..DiscoveryConfig::default() },
            ..BacktestConfig::default()
        };
        let r = run_backtest(
            &prices,
            &NewsStore::default(),
            &cfg,
            &mut Failing,
            &DecisionPolicy::Rule(cfg.rule),
            &Agents::Mock,
        )
        .unwrap();
        assert_eq!(r.status, RunStatus::Failed);
        assert!(r.performance.is_none());
        assert!(render_markdown(&r).contains("--"));
    }

    #[test]
    fn config_rejects_bad_values() {
        assert!(BacktestConfig { initial_cash: 0.0, ..BacktestConfig::default() }.validate().is_err());
        assert!(BacktestConfig { block: 0, ..BacktestConfig::default() }.validate().is_err());
        assert!(serde_json::from_str::<BacktestConfig>(r#"{"lookbak": 3}"#).is_err());
        BacktestConfig::default().validate().unwrap();
    }
}
