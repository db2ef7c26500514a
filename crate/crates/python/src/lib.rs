//! Python bindings. Structured results cross the boundary as JSON and come
//! back as plain dicts and lists.

use std::collections::BTreeMap;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use sdelab::agents::Agents;
use sdelab::backtest::{run_backtest, DecisionPolicy};
use sdelab::calib::{calibrate as calib, default_init, CalibConfig};
use sdelab::data::{load_news, load_prices, NewsStore, PricePath, RunConfig};
use sdelab::discovery::{
    best_model, run_discovery, DiscoveryConfig, DiscoveryMemory, OfflinePoolProposer, BENCHMARK_POOL,
};
use sdelab::graph::model_similarity;
use sdelab::risk::{self, RiskConfig};
use sdelab::{parse_model as parse, ParamVector, SdeModel, SimConfig};

create_exception!(sdelab_py, SdelabError, PyException);

fn err(e: impl std::fmt::Display) -> PyErr {
    SdelabError::new_err(e.to_string())
}

fn model(text: &str) -> PyResult<SdeModel> {
    parse(text).map_err(err)
}

fn params(map: BTreeMap<String, f64>) -> ParamVector {
    map.into_iter().collect()
}

fn history(closes: Vec<f64>) -> PyResult<PricePath> {
    let start = chrono::NaiveDate::from_ymd_opt(2000, 1, 3).expect("valid date");
    PricePath::from_closes(start, closes).map_err(err)
}

fn to_py<T: serde::Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(err)?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

/// Canonical rendering of a model, e.g. `"dS = a*S dt + b*S dW"`.
#[pyfunction]
fn parse_model(text: &str) -> PyResult<String> {
    Ok(model(text)?.render())
}

/// Parameter names in calibration order.
#[pyfunction]
fn param_names(text: &str) -> PyResult<Vec<String>> {
    Ok(model(text)?.parameters())
}

/// Simulated paths, one list per path including the start value.
#[pyfunction]
#[pyo3(signature = (model_text, params_map, n_paths=64, steps=252, dt=1.0 / 252.0, s0=100.0, seed=0))]
fn simulate(
    model_text: &str,
    params_map: BTreeMap<String, f64>,
    n_paths: usize,
    steps: usize,
    dt: f64,
    s0: f64,
    seed: u64,
) -> PyResult<Vec<Vec<f64>>> {
    let cfg = SimConfig { n_paths, steps, dt, s0, seed };
    let ens = sdelab::simulate(&model(model_text)?, &params(params_map), &cfg).map_err(err)?;
    Ok(ens.paths().map(<[f64]>::to_vec).collect())
}

/// Fits `model_text` to `closes`; returns the calibration result as a dict.
#[pyfunction]
#[pyo3(signature = (model_text, closes, init=None, n_paths=8, seed=0))]
fn calibrate(
    py: Python<'_>,
    model_text: &str,
    closes: Vec<f64>,
    init: Option<BTreeMap<String, f64>>,
    n_paths: usize,
    seed: u64,
) -> PyResult<Py<PyAny>> {
    let m = model(model_text)?;
    let h = history(closes)?;
    let init = init.map_or_else(|| default_init(&m, &h.closes), params);
    let fit = calib(&m, &h, &init, &CalibConfig { n_paths, seed, ..CalibConfig::default() }).map_err(err)?;
    to_py(py, &fit)
}

/// Empirical `(VaR, CVaR)` of a loss sample.
#[pyfunction]
#[pyo3(signature = (losses, alpha=0.95))]
fn var_cvar(losses: Vec<f64>, alpha: f64) -> PyResult<(f64, f64)> {
    risk::var_cvar(&losses, alpha).map_err(err)
}

#[pyfunction]
fn max_drawdown(path: Vec<f64>) -> PyResult<f64> {
    risk::max_drawdown(&path).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (prices, lookback=14))]
fn rsi(prices: Vec<f64>, lookback: usize) -> PyResult<f64> {
    sdelab::trading::rsi(&prices, lookback).map_err(err)
}

/// Structural similarity of two models in `[0, 1]`.
#[pyfunction]
fn similarity(a: &str, b: &str) -> PyResult<f64> {
    Ok(model_similarity(&model(a)?, &model(b)?))
}

/// Monte Carlo risk report from the last close of `closes`.
#[pyfunction]
#[pyo3(signature = (model_text, params_map, closes, horizon=20, n_paths=10_000, alpha=0.95, seed=0))]
#[allow(clippy::too_many_arguments)]
fn risk_report(
    py: Python<'_>,
    model_text: &str,
    params_map: BTreeMap<String, f64>,
    closes: Vec<f64>,
    horizon: usize,
    n_paths: usize,
    alpha: f64,
    seed: u64,
) -> PyResult<Py<PyAny>> {
    let cfg = RiskConfig { horizon, n_paths, alpha, seed, ..RiskConfig::default() };
    let rep = risk::risk_report(&model(model_text)?, &params(params_map), &history(closes)?, &cfg).map_err(err)?;
    to_py(py, &rep)
}

/// Offline discovery with the mock agents. Returns `{"best": ..., "records": [...]}`.
#[pyfunction]
#[pyo3(signature = (closes, iterations=15, seed=0, calib_paths=1, calib_seed=None, benchmark_pool=false))]
fn discover(
    py: Python<'_>,
    closes: Vec<f64>,
    iterations: usize,
    seed: u64,
    calib_paths: usize,
    calib_seed: Option<u64>,
    benchmark_pool: bool,
) -> PyResult<Py<PyAny>> {
    let h = history(closes)?;
    let config = DiscoveryConfig {
        iterations,
        seed,
        calib_seed,
        calib: CalibConfig { n_paths: calib_paths, ..CalibConfig::default() },
        ..DiscoveryConfig::default()
    };
    let mut proposer =
        if benchmark_pool { OfflinePoolProposer::subset(BENCHMARK_POOL) } else { OfflinePoolProposer::full() };
    let mem = py
        .detach(|| run_discovery(&h, &mut proposer, &Agents::Mock, &config, DiscoveryMemory::default(), None))
        .map_err(err)?;
    let best = best_model(&mem).map_err(err)?.model.render();
    let out = serde_json::json!({ "best": best, "records": mem.records });
    to_py(py, &out)
}

/// Offline backtest from files; `config` is a run-config JSON path.
#[pyfunction]
#[pyo3(signature = (prices, config=None, news=None, seed=None))]
fn backtest(
    py: Python<'_>,
    prices: &str,
    config: Option<&str>,
    news: Option<&str>,
    seed: Option<u64>,
) -> PyResult<Py<PyAny>> {
    let cfg = config.map_or_else(|| Ok(RunConfig::default()), RunConfig::load).map_err(err)?;
    let h = load_prices(prices).map_err(err)?;
    let news = news.map_or_else(|| Ok(NewsStore::new(Vec::new())), load_news).map_err(err)?;
    let bc = sdelab::backtest::BacktestConfig { seed: seed.or(cfg.seed).unwrap_or(0), ..cfg.backtest };
    let policy = DecisionPolicy::from_binding(bc.policy, bc.rule, &Agents::Mock);
    let res = py
        .detach(|| run_backtest(&h, &news, &bc, &mut OfflinePoolProposer::full(), &policy, &Agents::Mock))
        .map_err(err)?;
    to_py(py, &res)
}

#[pymodule]
fn sdelab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("SdelabError", m.py().get_type::<SdelabError>())?;
    m.add_function(wrap_pyfunction!(parse_model, m)?)?;
    m.add_function(wrap_pyfunction!(param_names, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(calibrate, m)?)?;
    m.add_function(wrap_pyfunction!(var_cvar, m)?)?;
    m.add_function(wrap_pyfunction!(max_drawdown, m)?)?;
    m.add_function(wrap_pyfunction!(rsi, m)?)?;
    m.add_function(wrap_pyfunction!(similarity, m)?)?;
    m.add_function(wrap_pyfunction!(risk_report, m)?)?;
    m.add_function(wrap_pyfunction!(discover, m)?)?;
    m.add_function(wrap_pyfunction!(backtest, m)?)?;
    Ok(())
}
