//! Trend indicators, all-in/all-out portfolio accounting and performance
//! measures.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dsl::SdeModel;
use crate::eval::{eval_term, EvalError};
use crate::params::ParamVector;
use crate::risk::{max_drawdown, RiskReport};
use crate::stats::{mean, sample_std};

/// Flat per-trade cost, 8.8 basis points.
pub const DEFAULT_KAPPA: f64 = 8.8e-4;
pub const RSI_LOOKBACK: usize = 14;
pub const RSI_OVERSOLD: f64 = 30.0;
pub const RSI_OVERBOUGHT: f64 = 70.0;
pub const TRADING_DAYS: f64 = 252.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TradingError {
    #[error("need at least {need} prices, got {got}")]
    InsufficientHistory { need: usize, got: usize },
    #[error("price must be positive, got {0}")]
    NonPositivePrice(f64),
    #[error("equity must be positive, found {value} at index {index}")]
    NonPositiveEquity { index: usize, value: f64 },
    #[error("unknown trade signal {0:?}")]
    UnknownSignal(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TradeSignal {
    Buy,
    Sell,
    Hold,
}

impl fmt::Display for TradeSignal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TradeSignal::Buy => "buy",
            TradeSignal::Sell => "sell",
            TradeSignal::Hold => "hold",
        })
    }
}

impl FromStr for TradeSignal {
    type Err = TradingError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "buy" => Ok(TradeSignal::Buy),
            "sell" => Ok(TradeSignal::Sell),
            "hold" => Ok(TradeSignal::Hold),
            _ => Err(TradingError::UnknownSignal(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DriftPolarity {
    Positive,
    Negative,
}

impl fmt::Display for DriftPolarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DriftPolarity::Positive => "positive",
            DriftPolarity::Negative => "negative",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stance {
    Bullish,
    Bearish,
    #[default]
    Mixed,
}

impl fmt::Display for Stance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stance::Bullish => "bullish",
            Stance::Bearish => "bearish",
            Stance::Mixed => "mixed",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrendReport {
    pub rsi: f64,
    pub drift_polarity: DriftPolarity,
    pub drift: f64,
    pub lookback: usize,
}

/// RSI over the last `lookback` one-day changes using plain averages.
pub fn rsi(prices: &[f64], lookback: usize) -> Result<f64, TradingError> {
    if lookback == 0 || prices.len() < lookback + 1 {
        return Err(TradingError::InsufficientHistory { need: lookback + 1, got: prices.len() });
    }
    let window = &prices[prices.len() - lookback - 1..];
    let (gain, loss) = window.windows(2).fold((0.0, 0.0), |(g, l), w| {
        let d = w[1] - w[0];
        if d > 0.0 {
            (g + d, l)
        } else {
            (g, l - d)
        }
    });
    let n = lookback as f64;
    let (avg_gain, avg_loss) = (gain / n, loss / n);
    Ok(if avg_loss == 0.0 {
        100.0
    } else if avg_gain == 0.0 {
        0.0
    } else {
        100.0 - 100.0 / (1.0 + avg_gain / avg_loss)
    })
}

/// Sign of the drift term at `(s, t)`; zero counts as positive.
pub fn drift_polarity(model: &SdeModel, params: &ParamVector, s: f64, t: f64) -> Result<DriftPolarity, TradingError> {
    let f = eval_term(&model.drift, params, s, t)?;
    Ok(if f >= 0.0 { DriftPolarity::Positive } else { DriftPolarity::Negative })
}

pub fn trend_report(
    prices: &[f64],
    model: &SdeModel,
    params: &ParamVector,
    t: f64,
    lookback: usize,
) -> Result<TrendReport, TradingError> {
    let r = rsi(prices, lookback)?;
    let s = *prices.last().expect("rsi checked length");
    let drift = eval_term(&model.drift, params, s, t)?;
    let drift_polarity = if drift >= 0.0 { DriftPolarity::Positive } else { DriftPolarity::Negative };
    Ok(TrendReport { rsi: r, drift_polarity, drift, lookback })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AccountingMode {
    /// Buys size `P = C / S` and then pay the fee, leaving cash at `-κPS`.
    Literal,
    /// Buys size `P = C / (S (1 + κ))` so cash lands on zero.
    #[default]
    CostAware,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PortfolioState {
    pub cash: f64,
    pub position: f64,
    /// Signal actually executed last; a sell with no position records hold.
    pub last_signal: TradeSignal,
    pub total_costs: f64,
}

impl PortfolioState {
    pub fn new(cash: f64) -> Self {
        Self { cash, position: 0.0, last_signal: TradeSignal::Hold, total_costs: 0.0 }
    }

    pub fn equity(&self, price: f64) -> f64 {
        self.cash + self.position * price
    }
}

/// Executes one all-in or all-out trade. Buys with no cash and sells with
/// no position are recorded as holds.
pub fn apply_signal(
    state: PortfolioState,
    signal: TradeSignal,
    price: f64,
    kappa: f64,
    mode: AccountingMode,
) -> Result<PortfolioState, TradingError> {
    if !(price > 0.0 && price.is_finite()) {
        return Err(TradingError::NonPositivePrice(price));
    }
    let hold = PortfolioState { last_signal: TradeSignal::Hold, ..state };
    Ok(match signal {
        TradeSignal::Buy if state.cash > 0.0 => {
            let (bought, cash, cost) = match mode {
                AccountingMode::Literal => {
                    let p = state.cash / price;
                    let cost = kappa * p * price;
                    (p, state.cash - p * price - cost, cost)
                }
                AccountingMode::CostAware => {
                    let p = state.cash / (price * (1.0 + kappa));
                    (p, 0.0, state.cash - p * price)
                }
            };
            PortfolioState {
                cash,
                position: state.position + bought,
                last_signal: TradeSignal::Buy,
                total_costs: state.total_costs + cost,
            }
        }
        TradeSignal::Sell if state.position > 0.0 => {
            let proceeds = state.position * price;
            let cost = kappa * proceeds;
            PortfolioState {
                cash: state.cash + proceeds - cost,
                position: 0.0,
                last_signal: TradeSignal::Sell,
                total_costs: state.total_costs + cost,
            }
        }
        _ => hold,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Performance {
    pub pnl: f64,
    pub sharpe: f64,
    pub mdd: f64,
}

/// PnL, annualised Sharpe on daily simple returns and maximum drawdown.
pub fn performance(equity: &[f64], risk_free_annual: f64) -> Result<Performance, TradingError> {
    if equity.len() < 2 {
        return Err(TradingError::InsufficientHistory { need: 2, got: equity.len() });
    }
    if let Some((index, &value)) = equity.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        return Err(TradingError::NonPositiveEquity { index, value });
    }
    let returns: Vec<f64> = equity.windows(2).map(|w| w[1] / w[0] - 1.0).collect();
    let rf = risk_free_annual / TRADING_DAYS;
    let sd = if returns.len() > 1 { sample_std(&returns) } else { 0.0 };
    let sharpe = if sd < 1e-10 { 0.0 } else { (mean(&returns) - rf) / sd * TRADING_DAYS.sqrt() };
    let mdd = max_drawdown(equity).expect("equity validated");
    Ok(Performance { pnl: equity[equity.len() - 1] - equity[0], sharpe, mdd })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RulePolicyConfig {
    /// EVT VaR (or plain VaR when EVT is unavailable) above this fraction of
    /// the current price counts as an excessive loss.
    pub loss_limit: f64,
    pub oversold: f64,
    pub overbought: f64,
}

impl Default for RulePolicyConfig {
    fn default() -> Self {
        Self { loss_limit: 0.05, oversold: RSI_OVERSOLD, overbought: RSI_OVERBOUGHT }
    }
}

/// Deterministic stand-in for the trader agent.
pub fn rule_policy(
    risk: &RiskReport,
    trend: &TrendReport,
    sentiment: Stance,
    price: f64,
    config: &RulePolicyConfig,
) -> TradeSignal {
    let tail = risk.evt_var.unwrap_or(risk.var);
    let negative = trend.drift_polarity == DriftPolarity::Negative;
    if trend.rsi > config.overbought || (negative && tail > config.loss_limit * price) {
        TradeSignal::Sell
    } else if !negative && trend.rsi < config.overbought && sentiment != Stance::Bearish {
        TradeSignal::Buy
    } else {
        TradeSignal::Hold
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::parse_model;

    #[test]
    fn rsi_examples() {
        let up: Vec<f64> = (0..15).map(f64::from).collect();
        assert_eq!(rsi(&up, 14).unwrap(), 100.0);
        let alt: Vec<f64> = (0..15).map(|i| if i % 2 == 0 { 10.0 } else { 11.0 }).collect();
        assert_eq!(rsi(&alt, 14).unwrap(), 50.0);
        let down: Vec<f64> = (0..15).map(|i| 100.0 - f64::from(i)).collect();
        assert_eq!(rsi(&down, 14).unwrap(), 0.0);
        assert!(rsi(&up[..14], 14).is_err());
    }

    #[test]
    fn rsi_hand_case_and_scale() {
        // Seven +4 days and seven -2 days: gains 28, losses 14.
        let mut p = vec![100.0];
        for i in 0..14 {
            let d = if i % 2 == 0 { 4.0 } else { -2.0 };
            p.push(p[i] + d);
        }
        let r = rsi(&p, 14).unwrap();
        assert!((r - 200.0 / 3.0).abs() < 1e-9);
        let scaled: Vec<f64> = p.iter().map(|x| x * 3.5).collect();
        assert!((rsi(&scaled, 14).unwrap() - r).abs() < 1e-9);
    }

    #[test]
    fn polarity_examples() {
        let gbm = parse_model("dS = a*S dt + b*S dW").unwrap();
        let pos: ParamVector = "a=0.05,b=0.2".parse().unwrap();
        let neg: ParamVector = "a=-0.05,b=0.2".parse().unwrap();
        assert_eq!(drift_polarity(&gbm, &pos, 100.0, 0.0).unwrap(), DriftPolarity::Positive);
        assert_eq!(drift_polarity(&gbm, &neg, 100.0, 0.0).unwrap(), DriftPolarity::Negative);
        let ou = parse_model("dS = a*(b - S) dt + c dW").unwrap();
        let p: ParamVector = "a=1,b=50,c=1".parse().unwrap();
        assert_eq!(drift_polarity(&ou, &p, 100.0, 0.0).unwrap(), DriftPolarity::Negative);
        let zero = parse_model("dS = 0 dt + b dW").unwrap();
        assert_eq!(drift_polarity(&zero, &"b=1".parse().unwrap(), 1.0, 0.0).unwrap(), DriftPolarity::Positive);
    }

    #[test]
    fn accounting_examples() {
        let s0 = PortfolioState::new(1000.0);
        let lit = apply_signal(s0, TradeSignal::Buy, 100.0, DEFAULT_KAPPA, AccountingMode::Literal).unwrap();
        assert_eq!(lit.position, 10.0);
        assert!((lit.cash + 0.88).abs() < 1e-12);
        let ca = apply_signal(s0, TradeSignal::Buy, 100.0, DEFAULT_KAPPA, AccountingMode::CostAware).unwrap();
        assert_eq!(ca.cash, 0.0);
        assert!((ca.position - 9.991_208).abs() < 1e-6);
        let held = PortfolioState { cash: 0.0, position: 10.0, last_signal: TradeSignal::Buy, total_costs: 0.0 };
        let sold = apply_signal(held, TradeSignal::Sell, 110.0, DEFAULT_KAPPA, AccountingMode::CostAware).unwrap();
        assert!((sold.cash - 1099.032).abs() < 1e-9);
        assert_eq!(sold.position, 0.0);
        assert!((sold.total_costs - 0.968).abs() < 1e-12);
        let h = apply_signal(held, TradeSignal::Hold, 50.0, DEFAULT_KAPPA, AccountingMode::Literal).unwrap();
        assert_eq!((h.cash, h.position), (held.cash, held.position));
        let noop = apply_signal(s0, TradeSignal::Sell, 100.0, DEFAULT_KAPPA, AccountingMode::CostAware).unwrap();
        assert_eq!(noop.last_signal, TradeSignal::Hold);
        assert!(apply_signal(s0, TradeSignal::Buy, 0.0, DEFAULT_KAPPA, AccountingMode::Literal).is_err());
    }

    #[test]
    fn performance_examples() {
        let flat = performance(&[1000.0; 10], 0.0).unwrap();
        assert_eq!((flat.pnl, flat.sharpe, flat.mdd), (0.0, 0.0, 0.0));
        let p = performance(&[1000.0, 1100.0, 1372.0], 0.0).unwrap();
        assert!((p.pnl - 372.0).abs() < 1e-9);
        let rf = 0.05;
        let daily = rf / TRADING_DAYS;
        let eq: Vec<f64> = (0..20).map(|i| 1000.0 * (1.0 + daily).powi(i)).collect();
        assert_eq!(performance(&eq, rf).unwrap().sharpe, 0.0);
        assert!(performance(&[1.0, -1.0], 0.0).is_err());
    }

    fn report(var: f64, evt: Option<f64>) -> RiskReport {
        RiskReport {
            var,
            cvar: var,
            mdd: 0.0,
            evt_var: evt,
            evt_cvar: None,
            loss_gpd: None,
            residual_gpd: None,
            residual_mean: None,
            residual_std: None,
            last_residual: None,
            mdd_paths: Vec::new(),
        }
    }

    fn trend(rsi: f64, pol: DriftPolarity) -> TrendReport {
        TrendReport { rsi, drift_polarity: pol, drift: 0.0, lookback: 14 }
    }

    #[test]
    fn rule_policy_examples() {
        let c = RulePolicyConfig::default();
        let r = report(1.0, Some(1.0));
        assert_eq!(
            rule_policy(&r, &trend(75.0, DriftPolarity::Positive), Stance::Bullish, 100.0, &c),
            TradeSignal::Sell
        );
        assert_eq!(
            rule_policy(&r, &trend(50.0, DriftPolarity::Positive), Stance::Bullish, 100.0, &c),
            TradeSignal::Buy
        );
        assert_eq!(rule_policy(&r, &trend(50.0, DriftPolarity::Negative), Stance::Mixed, 100.0, &c), TradeSignal::Hold);
        let risky = report(1.0, Some(10.0));
        assert_eq!(
            rule_policy(&risky, &trend(50.0, DriftPolarity::Negative), Stance::Mixed, 100.0, &c),
            TradeSignal::Sell
        );
        assert_eq!(
            rule_policy(&r, &trend(50.0, DriftPolarity::Positive), Stance::Bearish, 100.0, &c),
            TradeSignal::Hold
        );
    }
}
