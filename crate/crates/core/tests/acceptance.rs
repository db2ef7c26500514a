//! Acceptance suite: one PASS/FAIL line per criterion, each computed
//! against an independent oracle with the pinned tolerance. Runs offline
//! with the mock agents. Exits non-zero on failures only when
//! `ACCEPTANCE_STRICT=1`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sdelab::agents::{parse_scorer_reply, Agents};
use sdelab::backtest::{buy_and_hold, replay_ledger, run_backtest, BacktestConfig, BacktestResult, DecisionPolicy};
use sdelab::bench::{run_benchmark, GroundTruthSpec, TableWeights};
use sdelab::calib::{calibrate, CalibConfig};
use sdelab::data::{load_news, load_prices, PricePath, RunConfig};
use sdelab::discovery::{
    library, score_candidate, DiscoveryConfig, OfflinePoolProposer, ScorerWeights, BENCHMARK_POOL,
};
use sdelab::dsl::parse_suggestions;
use sdelab::graph::{diversity, similarity, to_symbolic_graph, DEFAULT_WL_ROUNDS};
use sdelab::metrics::DistComparison;
use sdelab::risk::{fit_gpd, max_drawdown, risk_report, var_cvar, RiskConfig};
use sdelab::trading::{apply_signal, rsi, AccountingMode, PortfolioState, TradeSignal, DEFAULT_KAPPA};
use sdelab::{parse_model, simulate, ParamVector, SimConfig};

/// Standard normal quantile at 0.05.
const Z_05: f64 = -1.644_853_626_951_472_2;

struct Report {
    passed: usize,
    failed: usize,
}

impl Report {
    fn check(&mut self, id: &str, ok: bool, detail: String) {
        println!("{} [{id}] {detail}", if ok { "PASS" } else { "FAIL" });
        if ok {
            self.passed += 1;
        } else {
            self.failed += 1;
        }
    }

    fn info(&self, id: &str, detail: String) {
        println!("INFO [{id}] {detail}");
    }
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn gbm_history(seed: u64) -> PricePath {
    let m = parse_model("dS = a*S dt + b*S dW").unwrap();
    let ens = simulate(&m, &"a=0.05,b=0.2".parse().unwrap(), &SimConfig { n_paths: 1, seed, ..SimConfig::default() })
        .unwrap();
    PricePath::from_closes(chrono::NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(), ens.path(0).to_vec()).unwrap()
}

fn criterion_1(r: &mut Report) {
    let gbm = parse_model("dS = a*S dt + b*S dW").unwrap();
    let h = gbm_history(2025);
    let init: ParamVector = "a=0.1,b=0.3".parse().unwrap();
    let t = Instant::now();
    let fit = calibrate(&gbm, &h, &init, &CalibConfig { n_paths: 64, seed: 7, ..CalibConfig::default() }).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let (a, b) = (fit.params.get("a").unwrap(), fit.params.get("b").unwrap());
    let ok = (a - 0.05).abs() <= 0.02 && (b - 0.2).abs() <= 0.05 && secs < 60.0;
    r.check(
        "1",
        ok,
        format!(
            "GBM recovery with 64 independent paths: a={a:.4} (±0.02 of 0.05), b={b:.4} (±0.05 of 0.2), {secs:.2}s"
        ),
    );

    let crn = calibrate(&gbm, &h, &init, &CalibConfig { n_paths: 1, seed: 2025, ..CalibConfig::default() }).unwrap();
    r.info(
        "1",
        format!(
            "same data, common noise (1 path on the generating seed): a={:.4}, b={:.4}",
            crn.params.get("a").unwrap(),
            crn.params.get("b").unwrap()
        ),
    );
}

fn criterion_2(r: &mut Report) {
    let config = DiscoveryConfig {
        iterations: 15,
        calib: CalibConfig { n_paths: 1, ..CalibConfig::default() },
        eval_paths: 16,
        seed: 42,
        ..DiscoveryConfig::default()
    };
    let mut hits = 0;
    let mut lines = Vec::new();
    for spec in GroundTruthSpec::standard_targets() {
        let mut p = OfflinePoolProposer::subset(BENCHMARK_POOL);
        let rep = run_benchmark(&spec, &mut p, "offline", &Agents::Mock, &config, TableWeights::default()).unwrap();
        let run = &rep.runs[0];
        let hit = run.best_model.as_deref() == Some(spec.model.render().as_str());
        hits += usize::from(hit);
        lines.push(format!("{}→{}", spec.name, run.best_model.as_deref().unwrap_or("none")));
    }
    r.check("2", hits == 3, format!("discovery selects the generating model {hits}/3: {}", lines.join("; ")));
}

fn var_oracle(losses: &[f64], alpha: f64) -> (f64, f64) {
    let n = losses.len() as f64;
    let var = losses
        .iter()
        .copied()
        .filter(|&v| losses.iter().filter(|&&x| x <= v).count() as f64 / n >= alpha)
        .fold(f64::INFINITY, f64::min);
    let tail: Vec<f64> = losses.iter().copied().filter(|&x| x > var).collect();
    let cvar = if tail.is_empty() { var } else { tail.iter().sum::<f64>() / tail.len() as f64 };
    (var, cvar)
}

fn criterion_3(r: &mut Report) {
    let l: Vec<f64> = (1..=100).map(f64::from).collect();
    let (var, cvar) = var_cvar(&l, 0.95).unwrap();
    let mut ok = var == 95.0 && cvar == 98.0;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let n = rng.random_range(1..400);
        let alpha = rng.random_range(0.5..0.999);
        let sample: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0f64).round() * rng.random::<f64>()).collect();
        let (v, c) = var_cvar(&sample, alpha).unwrap();
        let (ov, oc) = var_oracle(&sample, alpha);
        ok &= v == ov;
        worst = worst.max((c - oc).abs());
    }
    ok &= worst <= 1e-12;
    r.check("3", ok, format!("1..100 → var {var}, cvar {cvar}; 50 random samples, max |cvar - oracle| = {worst:e}"));
}

fn criterion_4(r: &mut Report) {
    let mut parts = Vec::new();
    let mut ok = true;
    for (xi, gamma, seed) in [(0.2, 1.0, 41u64), (-0.2, 1.0, 43)] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y: Vec<f64> = (0..10_000).map(|_| (gamma / xi) * ((1.0 - rng.random::<f64>()).powf(-xi) - 1.0)).collect();
        let fit = fit_gpd(&y).unwrap();
        ok &= (fit.xi - xi).abs() <= 0.05 && (fit.gamma - gamma).abs() <= 0.1;
        parts.push(format!("ξ={xi}: fit ξ={:.4}, γ={:.4}", fit.xi, fit.gamma));
    }
    r.check("4", ok, format!("GPD MLE recovery: {}", parts.join("; ")));
}

fn criterion_5(r: &mut Report) {
    let gbm = parse_model("dS = a*S dt + b*S dW").unwrap();
    let params: ParamVector = "a=0.05,b=0.2".parse().unwrap();
    let start = chrono::NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
    let h = PricePath::from_closes(start, vec![100.0; 30]).unwrap();
    let t: f64 = 20.0 / 252.0;
    let closed = 100.0 * (1.0 - ((0.05 - 0.02) * t + 0.2 * t.sqrt() * Z_05).exp());
    let run = |seed| {
        risk_report(&gbm, &params, &h, &RiskConfig { n_paths: 10_000, horizon: 20, seed, ..RiskConfig::default() })
            .unwrap()
    };
    let rep = run(RiskConfig::default().seed);
    let evt = rep.evt_var.unwrap_or(f64::NAN);
    let rel_evt = (evt - closed).abs() / closed;
    let rel_mc = (rep.var - closed).abs() / closed;
    r.check(
        "5",
        rel_evt <= 0.02 && rel_mc <= 0.02,
        format!(
            "20-day 95% VaR from s0=100: closed form {closed:.4}, EVT {evt:.4} ({:.2}%), empirical {:.4} ({:.2}%)",
            100.0 * rel_evt,
            rep.var,
            100.0 * rel_mc
        ),
    );
    let vars: Vec<f64> = (1..=20).map(|s| run(s).var).collect();
    let within = vars.iter().filter(|v| ((*v - closed) / closed).abs() <= 0.02).count();
    let mean = vars.iter().sum::<f64>() / vars.len() as f64;
    r.info(
        "5",
        format!("seeds 1..=20: {within}/20 within 2%, mean VaR {mean:.4} ({:+.2}%)", 100.0 * (mean - closed) / closed),
    );
}

fn criterion_6(r: &mut Report) {
    let m = max_drawdown(&[100.0, 120.0, 90.0, 110.0, 80.0]).unwrap();
    let mut ok = (m - 1.0 / 3.0).abs() <= 1e-9;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let path: Vec<f64> = (0..50).map(|_| rng.random_range(1.0..200.0)).collect();
        let c = rng.random_range(0.01..100.0);
        let scaled: Vec<f64> = path.iter().map(|x| x * c).collect();
        worst = worst.max((max_drawdown(&path).unwrap() - max_drawdown(&scaled).unwrap()).abs());
    }
    ok &= worst <= 1e-12;
    r.check("6", ok, format!("MDD hand case {m:.9}; scale invariance max diff {worst:e} over 100 paths"));
}

fn criterion_7(r: &mut Report) {
    let up: Vec<f64> = (0..15).map(f64::from).collect();
    let alt: Vec<f64> = (0..15).map(|i| if i % 2 == 0 { 10.0 } else { 11.0 }).collect();
    // Seven +4 and seven -2 moves: gains 28, losses 14.
    let mut hand = vec![100.0];
    for i in 0..14 {
        hand.push(hand[i] + if i % 2 == 0 { 4.0 } else { -2.0 });
    }
    let (a, b, c) = (rsi(&up, 14).unwrap(), rsi(&alt, 14).unwrap(), rsi(&hand, 14).unwrap());
    let ok = a == 100.0 && b == 50.0 && (c - 66.667).abs() <= 1e-3 && (c - 200.0 / 3.0).abs() <= 1e-6;
    r.check("7", ok, format!("RSI all-gain {a}, alternating {b}, hand case {c:.6}"));
}

fn three_day() -> f64 {
    let s = PortfolioState::new(1000.0);
    let s = apply_signal(s, TradeSignal::Buy, 100.0, DEFAULT_KAPPA, AccountingMode::CostAware).unwrap();
    let s = apply_signal(s, TradeSignal::Hold, 105.0, DEFAULT_KAPPA, AccountingMode::CostAware).unwrap();
    let s = apply_signal(s, TradeSignal::Sell, 110.0, DEFAULT_KAPPA, AccountingMode::CostAware).unwrap();
    s.equity(110.0)
}

fn criterion_8(r: &mut Report, runs: &[(String, BacktestResult)]) {
    let lit =
        apply_signal(PortfolioState::new(1000.0), TradeSignal::Buy, 100.0, DEFAULT_KAPPA, AccountingMode::Literal)
            .unwrap();
    r.check(
        "8a",
        lit.position == 10.0 && (lit.cash + 0.88).abs() < 1e-12,
        format!("literal buy at C=1000, S=100: C={:.12}, P={}", lit.cash, lit.position),
    );
    let eq = three_day();
    // Hand ledger: shares 1000/(100(1+κ)), sold at 110 less κ of proceeds.
    let hand = 1000.0 / (100.0 * (1.0 + DEFAULT_KAPPA)) * 110.0 * (1.0 - DEFAULT_KAPPA);
    r.check(
        "8b",
        (eq - 1099.0304).abs() <= 1e-4,
        format!("cost-aware 3-day scenario final equity {eq:.4} (target 1099.0304 ± 1e-4; hand ledger {hand:.4})"),
    );
    let worst = runs.iter().map(|(_, res)| replay_ledger(res).error()).fold(0.0, f64::max);
    r.check("8c", worst <= 1e-9, format!("ledger replay over {} backtest runs, max error {worst:e}", runs.len()));
}

fn fixture_runs() -> Vec<(String, BacktestResult)> {
    let cfg = RunConfig::load(fixtures().join("configs/backtest_fast.json")).unwrap();
    let news = load_news(fixtures().join("news/synthetic_spx.json")).unwrap();
    let mut out = Vec::new();
    for f in ["spx_like", "backtest_small"] {
        let prices = load_prices(fixtures().join(format!("prices/{f}.csv"))).unwrap();
        let bc = BacktestConfig { seed: cfg.seed.unwrap_or(0), ..cfg.backtest.clone() };
        for (name, policy) in [("rule", DecisionPolicy::Rule(bc.rule)), ("hold", DecisionPolicy::BuyThenHold)] {
            let res =
                run_backtest(&prices, &news, &bc, &mut OfflinePoolProposer::full(), &policy, &Agents::Mock).unwrap();
            out.push((format!("{f}/{name}"), res));
        }
        let lit = BacktestConfig { mode: AccountingMode::Literal, ..bc.clone() };
        let res = run_backtest(
            &prices,
            &news,
            &lit,
            &mut OfflinePoolProposer::full(),
            &DecisionPolicy::Rule(bc.rule),
            &Agents::Mock,
        )
        .unwrap();
        out.push((format!("{f}/rule-literal"), res));
    }
    out
}

fn criterion_9(r: &mut Report, runs: &[(String, BacktestResult)]) {
    let cfg = RunConfig::load(fixtures().join("configs/backtest_fast.json")).unwrap();
    let mut same = true;
    for f in ["spx_like", "backtest_small"] {
        let prices = load_prices(fixtures().join(format!("prices/{f}.csv"))).unwrap();
        let lookback = cfg.backtest.lookback;
        let bh = buy_and_hold(&prices.slice(lookback..prices.len()), &cfg.backtest).unwrap();
        let hold = &runs.iter().find(|(n, _)| n == &format!("{f}/hold")).unwrap().1;
        same &= hold.equity[1..] == bh.equity[1..];
    }
    r.check("9a", same, "hold-only policy equals buy-and-hold element-wise on every fixture".into());

    let again = fixture_runs();
    let identical = runs.len() == again.len()
        && runs
            .iter()
            .zip(&again)
            .all(|(a, b)| serde_json::to_string(&a.1).unwrap() == serde_json::to_string(&b.1).unwrap());
    r.check("9b", identical, format!("{} fixed-seed offline backtests bit-identical across two runs", runs.len()));

    let guarded = runs.iter().all(|(_, res)| res.lookahead_ok);
    r.check("9c", guarded, "no-lookahead guard clean on every fixture run".into());
}

fn criterion_10(r: &mut Report) {
    let mut ok = true;
    for m in ["dS = a*S dt + b*S^c dW", "dS = a*(b - S) dt + c*sqrt(S) dW", "dS = a*S dt + b*S dW + S dJ"] {
        let g = to_symbolic_graph(&parse_model(m).unwrap());
        ok &= similarity(&g, &g, DEFAULT_WL_ROUNDS) == 1.0;
        ok &= diversity(&[g.clone(), g.clone(), g], DEFAULT_WL_ROUNDS).unwrap() == 0.0;
    }
    let lib = library();
    let round_trip = lib.iter().all(|e| parse_model(&e.model.render()).unwrap() == e.model);
    let text = std::fs::read_to_string(fixtures().join("agents/suggestor_sample.txt")).unwrap();
    let parsed = parse_suggestions(&text).map(|v| v.len()).unwrap_or(0);
    r.check(
        "10",
        ok && round_trip && parsed == 21,
        format!("self-similarity 1 and triplicate diversity 0: {ok}; {} library models round-trip: {round_trip}; suggestor sample parses to {parsed} models", lib.len()),
    );
}

fn criterion_11(r: &mut Report) {
    let text = std::fs::read_to_string(fixtures().join("metrics/gbm_vs_cir_comparison.json")).unwrap();
    let c: DistComparison = serde_json::from_str(&text).unwrap();
    let s = score_candidate(&c, 70, &ScorerWeights::default());
    let reply = std::fs::read_to_string(fixtures().join("agents/scorer_sample.txt")).unwrap();
    let parsed = parse_scorer_reply(&reply);
    let ok = (s.novelty_sub, s.metrics_sub, s.combined) == (35, 32, 67)
        && parsed.novelty == Some(70)
        && parsed.metrics_sub == Some(s.metrics_sub)
        && parsed.total == Some(s.combined);
    r.check(
        "11",
        ok,
        format!(
            "scorer: {} + {} = {} from novelty 70 and the pinned deltas; reply reads novelty {:?}, metrics {:?}, total {:?}",
            s.novelty_sub, s.metrics_sub, s.combined, parsed.novelty, parsed.metrics_sub, parsed.total
        ),
    );
}

fn main() {
    let mut r = Report { passed: 0, failed: 0 };
    criterion_1(&mut r);
    criterion_2(&mut r);
    criterion_3(&mut r);
    criterion_4(&mut r);
    criterion_5(&mut r);
    criterion_6(&mut r);
    criterion_7(&mut r);
    let runs = fixture_runs();
    criterion_8(&mut r, &runs);
    criterion_9(&mut r, &runs);
    criterion_10(&mut r);
    criterion_11(&mut r);
    println!("acceptance: {} passed, {} failed", r.passed, r.failed);
    if r.failed > 0 && std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
