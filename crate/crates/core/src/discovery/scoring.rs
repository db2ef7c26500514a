//! Candidate scoring: half novelty, half metric fit.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::metrics::DistComparison;

/// Weight and typical magnitude of one delta in the fit norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaWeight {
    pub weight: f64,
    pub scale: f64,
}

const fn dw(weight: f64, scale: f64) -> DeltaWeight {
    DeltaWeight { weight, scale }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScorerWeights {
    /// Rate of the exponential map from the delta norm to the sub-score.
    pub decay: f64,
    /// Keys are flat comparison names such as `ks_statistic` or
    /// `delta_kurtosis`; names not listed do not count.
    pub deltas: BTreeMap<String, DeltaWeight>,
}

pub const DEFAULT_DECAY: f64 = 0.37;

impl Default for ScorerWeights {
    fn default() -> Self {
        let deltas = [
            ("ks_statistic", dw(2.0, 0.1)),
            ("delta_mean", dw(1.0, 1e-3)),
            ("delta_variance", dw(1.0, 1e-4)),
            ("delta_skewness", dw(0.5, 0.5)),
            ("delta_kurtosis", dw(0.5, 2.0)),
            ("delta_p95", dw(1.0, 5e-3)),
            ("delta_hill_estimator", dw(0.5, 0.2)),
            ("delta_hurst_exponent", dw(0.5, 0.1)),
            ("delta_jump_intensity", dw(1.0, 1e-2)),
            ("delta_acf_ret_1", dw(0.5, 0.1)),
            ("delta_acf_ret_5", dw(0.25, 0.1)),
            ("delta_acf_ret_10", dw(0.25, 0.1)),
            ("delta_acf_abs_1", dw(0.5, 0.1)),
            ("delta_acf_abs_5", dw(0.25, 0.1)),
            ("delta_acf_abs_10", dw(0.25, 0.1)),
            ("delta_mad_median", dw(0.5, 5e-3)),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        Self { decay: DEFAULT_DECAY, deltas }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreBreakdown {
    pub novelty_sub: u8,
    pub metrics_sub: u8,
    pub combined: u8,
}

/// Weighted root-mean-square of the scaled deltas.
pub fn delta_norm(flat: &BTreeMap<String, f64>, weights: &ScorerWeights) -> f64 {
    let (num, den) = weights.deltas.iter().fold((0.0, 0.0), |(num, den), (k, w)| match flat.get(k) {
        Some(v) if v.is_finite() => (num + w.weight * (v / w.scale).powi(2), den + w.weight),
        Some(_) => (f64::INFINITY, den + w.weight),
        None => (num, den),
    });
    if den == 0.0 {
        0.0
    } else {
        (num / den).sqrt()
    }
}

/// `50 exp(-decay * norm)`, rounded.
pub fn metrics_subscore(norm: f64, decay: f64) -> u8 {
    (50.0 * (-decay * norm).exp()).round().clamp(0.0, 50.0) as u8
}

/// Novelty halves onto 0–50, fit maps onto 0–50, and the two add.
pub fn score_candidate(comparison: &DistComparison, novelty: u8, weights: &ScorerWeights) -> ScoreBreakdown {
    let metrics_sub = metrics_subscore(delta_norm(&comparison.to_flat(), weights), weights.decay);
    score_parts(novelty, metrics_sub)
}

pub fn score_parts(novelty: u8, metrics_sub: u8) -> ScoreBreakdown {
    let novelty_sub = ((f64::from(novelty.min(100)) / 2.0).round()) as u8;
    let metrics_sub = metrics_sub.min(50);
    ScoreBreakdown { novelty_sub, metrics_sub, combined: novelty_sub + metrics_sub }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::MetricReport;

    fn zero() -> DistComparison {
        let deltas = MetricReport::default();
        DistComparison { ks_statistic: 0.0, wasserstein_1: 0.0, mape: 0.0, deltas }
    }

    #[test]
    fn perfect_fit_and_full_novelty() {
        let s = score_candidate(&zero(), 100, &ScorerWeights::default());
        assert_eq!(s, ScoreBreakdown { novelty_sub: 50, metrics_sub: 50, combined: 100 });
    }

    #[test]
    fn huge_deltas_and_no_novelty() {
        let mut c = zero();
        c.ks_statistic = 1.0;
        c.deltas.kurtosis = 1e6;
        let s = score_candidate(&c, 0, &ScorerWeights::default());
        assert_eq!(s, ScoreBreakdown { novelty_sub: 0, metrics_sub: 0, combined: 0 });
    }

    #[test]
    fn parts_add() {
        assert_eq!(score_parts(70, 32), ScoreBreakdown { novelty_sub: 35, metrics_sub: 32, combined: 67 });
    }
}
