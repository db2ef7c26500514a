//! Crate-level error wrapping the per-module error types.

use crate::agents::AgentError;
use crate::backtest::BacktestError;
use crate::bench::BenchError;
use crate::calib::CalibError;
use crate::data::DataError;
use crate::discovery::DiscoveryError;
use crate::dsl::ParseError;
use crate::eval::EvalError;
use crate::graph::GraphError;
use crate::metrics::MetricsError;
use crate::params::ParamParseError;
use crate::risk::RiskError;
use crate::sim::SimError;
use crate::trading::TradingError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Params(#[from] ParamParseError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Calib(#[from] CalibError),
    #[error(transparent)]
    Risk(#[from] RiskError),
    #[error(transparent)]
    Discovery(#[from] DiscoveryError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Trading(#[from] TradingError),
    #[error(transparent)]
    Backtest(#[from] BacktestError),
    #[error(transparent)]
    Bench(#[from] BenchError),
}
