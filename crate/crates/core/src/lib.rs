//! Symbolic SDE discovery, Monte Carlo risk metrics and a costed daily
//! trading backtest.
//!
//! The pipeline is layered bottom-up:
//! [`dsl`] parses and renders models, [`sim`] runs Euler-Maruyama on
//! frozen noise, [`calib`] fits parameters by gradient descent,
//! [`metrics`] and [`risk`] summarise paths, [`discovery`] runs the
//! candidate loop, and [`backtest`] drives daily decisions.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agents;
pub mod backtest;
pub mod bench;
pub mod calib;
pub mod data;
pub mod discovery;
pub mod dsl;
pub mod error;
pub mod eval;
pub mod graph;
pub mod metrics;
pub mod optim;
pub mod params;
pub mod risk;
pub mod seed;
pub mod sim;
pub mod stats;
pub mod trading;

pub use sim::{simulate, PathEnsemble, SimConfig};

pub use dsl::{parse_model, Expr, SdeModel};
pub use error::Error;
pub use params::ParamVector;
