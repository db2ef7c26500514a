//! Evaluation statistics for price series and the distributional comparison
//! between a simulated ensemble and the historical path. Everything works on
//! log-returns.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::sim::PathEnsemble;
use crate::stats::{log_returns, mean, median, quantile_sorted, sorted, variance};

pub const MIN_SERIES_LEN: usize = 30;
pub const MIN_HURST_LEN: usize = 100;
pub const ACF_LAGS: [usize; 3] = [1, 5, 10];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("series too short: need at least {need}, got {got}")]
    TooShort { need: usize, got: usize },
    #[error("series has non-positive or non-finite value at index {0}")]
    NonPositive(usize),
    #[error("hill estimator needs 1 <= k < n, got k={k}, n={n}")]
    BadK { k: usize, n: usize },
    #[error("hill estimator order statistic is not positive")]
    NonPositiveOrderStatistic,
    #[error("rescaled range is degenerate (constant increments)")]
    DegenerateRange,
}

macro_rules! metric_report {
    ($($field:ident),* $(,)?) => {
        /// Summary statistics of one series. Serialises to flat snake_case JSON.
        #[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
        pub struct MetricReport {
            $(pub $field: f64,)*
        }

        impl MetricReport {
            pub const FIELDS: &'static [&'static str] = &[$(stringify!($field)),*];

            pub fn values(&self) -> Vec<(&'static str, f64)> {
                vec![$((stringify!($field), self.$field)),*]
            }

            fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
                Self { $($field: f(self.$field, other.$field),)* }
            }

            fn scale(&self, k: f64) -> Self {
                Self { $($field: self.$field * k,)* }
            }
        }
    };
}

metric_report!(
    mean,
    variance,
    skewness,
    kurtosis,
    p95,
    hill_estimator,
    hurst_exponent,
    jump_intensity,
    acf_ret_1,
    acf_ret_5,
    acf_ret_10,
    acf_abs_1,
    acf_abs_5,
    acf_abs_10,
    growth_rate,
    mad_median,
);

impl MetricReport {
    /// Field-wise average.
    pub fn average(reports: &[MetricReport]) -> MetricReport {
        if reports.is_empty() {
            return MetricReport::default();
        }
        reports
            .iter()
            .fold(MetricReport::default(), |acc, r| acc.zip_with(r, |a, b| a + b))
            .scale(1.0 / reports.len() as f64)
    }

    pub fn abs_diff(&self, other: &MetricReport) -> MetricReport {
        self.zip_with(other, |a, b| (a - b).abs())
    }
}

/// Simulated-vs-historical comparison. `deltas` holds the mean over paths of
/// `|simulated - historical|` per metric.
#[derive(Debug, Clone, PartialEq)]
pub struct DistComparison {
    pub ks_statistic: f64,
    pub wasserstein_1: f64,
    pub mape: f64,
    pub deltas: MetricReport,
}

impl DistComparison {
    /// Flat map: `ks_statistic`, `wasserstein_1`, `mape`, `delta_<metric>`.
    pub fn to_flat(&self) -> BTreeMap<String, f64> {
        let mut m = BTreeMap::new();
        m.insert("ks_statistic".into(), self.ks_statistic);
        m.insert("wasserstein_1".into(), self.wasserstein_1);
        m.insert("mape".into(), self.mape);
        for (k, v) in self.deltas.values() {
            m.insert(format!("delta_{k}"), v);
        }
        m
    }

    fn from_flat(m: &BTreeMap<String, f64>) -> Result<Self, String> {
        let get = |k: &str| m.get(k).copied().ok_or_else(|| format!("missing key {k}"));
        let deltas: BTreeMap<String, f64> =
            m.iter().filter_map(|(k, v)| k.strip_prefix("delta_").map(|n| (n.to_string(), *v))).collect();
        let deltas: MetricReport =
            serde_json::to_value(deltas).and_then(serde_json::from_value).map_err(|e| e.to_string())?;
        Ok(Self {
            ks_statistic: get("ks_statistic")?,
            wasserstein_1: get("wasserstein_1")?,
            mape: get("mape")?,
            deltas,
        })
    }
}

impl Serialize for DistComparison {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_flat().serialize(s)
    }
}

impl<'de> Deserialize<'de> for DistComparison {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let m = BTreeMap::<String, f64>::deserialize(d)?;
        Self::from_flat(&m).map_err(serde::de::Error::custom)
    }
}

/// Result of [`evaluate_candidate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateEvaluation {
    pub historical: MetricReport,
    pub simulated: MetricReport,
    pub comparison: DistComparison,
}

fn check_series(series: &[f64], need: usize) -> Result<(), MetricsError> {
    if series.len() < need {
        return Err(MetricsError::TooShort { need, got: series.len() });
    }
    if let Some(i) = series.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(MetricsError::NonPositive(i));
    }
    Ok(())
}

/// Autocorrelation at `lag`; zero when the series has no variance.
pub fn acf(xs: &[f64], lag: usize) -> f64 {
    if lag >= xs.len() {
        return 0.0;
    }
    let m = mean(xs);
    let denom: f64 = xs.iter().map(|x| (x - m).powi(2)).sum();
    if denom == 0.0 {
        return 0.0;
    }
    let num: f64 = xs.windows(lag + 1).map(|w| (w[0] - m) * (w[lag] - m)).sum();
    num / denom
}

/// Hill tail-index estimate on absolute values: the mean log excess of the
/// `k` largest over the `(k+1)`-th largest.
pub fn hill_estimator(returns: &[f64], k: usize) -> Result<f64, MetricsError> {
    let n = returns.len();
    if k == 0 || k >= n {
        return Err(MetricsError::BadK { k, n });
    }
    let abs = sorted(&returns.iter().map(|r| r.abs()).collect::<Vec<_>>());
    let base = abs[n - k - 1];
    if !(base > 0.0) {
        return Err(MetricsError::NonPositiveOrderStatistic);
    }
    let lb = base.ln();
    Ok(abs[n - k..].iter().map(|x| x.ln() - lb).sum::<f64>() / k as f64)
}

pub fn default_hill_k(n: usize) -> usize {
    ((0.05 * n as f64).ceil() as usize).clamp(1, n.saturating_sub(1).max(1))
}

/// Rescaled-range Hurst estimate of an increment series.
pub fn hurst_exponent(series: &[f64]) -> Result<f64, MetricsError> {
    if series.len() < MIN_HURST_LEN {
        return Err(MetricsError::TooShort { need: MIN_HURST_LEN, got: series.len() });
    }
    rescaled_range_slope(series)
}

fn rescaled_range_slope(xs: &[f64]) -> Result<f64, MetricsError> {
    let n = xs.len();
    let mut pts = Vec::new();
    let mut w = 10;
    while w <= n / 2 {
        let ratios: Vec<f64> = xs
            .chunks_exact(w)
            .filter_map(|c| {
                let m = mean(c);
                let sd = variance(c).sqrt();
                // rounding leaves a tiny spread on constant chunks
                if sd <= 1e-12 * m.abs() || sd == 0.0 {
                    return None;
                }
                let (mut y, mut lo, mut hi) = (0.0f64, 0.0f64, 0.0f64);
                for x in c {
                    y += x - m;
                    lo = lo.min(y);
                    hi = hi.max(y);
                }
                Some((hi - lo) / sd)
            })
            .collect();
        if !ratios.is_empty() {
            pts.push(((w as f64).ln(), mean(&ratios).ln()));
        }
        w *= 2;
    }
    if pts.len() < 2 {
        return Err(MetricsError::DegenerateRange);
    }
    let xbar = pts.iter().map(|p| p.0).sum::<f64>() / pts.len() as f64;
    let ybar = pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
    let sxy: f64 = pts.iter().map(|p| (p.0 - xbar) * (p.1 - ybar)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - xbar).powi(2)).sum();
    Ok(sxy / sxx)
}

/// Fraction of returns beyond three standard deviations.
pub fn jump_intensity(returns: &[f64]) -> f64 {
    if returns.is_empty() {
        return 0.0;
    }
    let m = mean(returns);
    let sd = variance(returns).sqrt();
    if sd == 0.0 {
        return 0.0;
    }
    returns.iter().filter(|r| (*r - m).abs() > 3.0 * sd).count() as f64 / returns.len() as f64
}

fn report_from_returns(r: &[f64], series: &[f64]) -> MetricReport {
    let n = r.len() as f64;
    let m = mean(r);
    let var = variance(r);
    let (skewness, kurtosis) = if var > 0.0 {
        let m3 = r.iter().map(|x| (x - m).powi(3)).sum::<f64>() / n;
        let m4 = r.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n;
        (m3 / var.powf(1.5), m4 / var.powi(2) - 3.0)
    } else {
        (0.0, 0.0)
    };
    let srt = sorted(r);
    let abs: Vec<f64> = r.iter().map(|x| x.abs()).collect();
    let med = median(r);
    let dev: Vec<f64> = r.iter().map(|x| (x - med).abs()).collect();
    MetricReport {
        mean: m,
        variance: var,
        skewness,
        kurtosis,
        p95: quantile_sorted(&srt, 0.95),
        // Degenerate inputs fall back to neutral values so reports stay total.
        hill_estimator: hill_estimator(r, default_hill_k(r.len())).unwrap_or(0.0),
        hurst_exponent: rescaled_range_slope(r).unwrap_or(0.5),
        jump_intensity: jump_intensity(r),
        acf_ret_1: acf(r, 1),
        acf_ret_5: acf(r, 5),
        acf_ret_10: acf(r, 10),
        acf_abs_1: acf(&abs, 1),
        acf_abs_5: acf(&abs, 5),
        acf_abs_10: acf(&abs, 10),
        growth_rate: (series[series.len() - 1] / series[0]).ln() / n,
        mad_median: median(&dev),
    }
}

/// Statistics of a price series, computed on its log-returns.
pub fn summary_stats(series: &[f64]) -> Result<MetricReport, MetricsError> {
    check_series(series, MIN_SERIES_LEN)?;
    Ok(report_from_returns(&log_returns(series), series))
}

/// Two-sample Kolmogorov-Smirnov statistic.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let (x, y) = (sorted(a), sorted(b));
    let (n, m) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < x.len() && j < y.len() {
        let v = x[i].min(y[j]);
        while i < x.len() && x[i] <= v {
            i += 1;
        }
        while j < y.len() && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    d
}

/// Exact Wasserstein-1 distance as the integral of the absolute difference
/// between the two empirical quantile functions.
pub fn wasserstein_1(a: &[f64], b: &[f64]) -> f64 {
    let (x, y) = (sorted(a), sorted(b));
    let (n, m) = (x.len(), y.len());
    if n == 0 || m == 0 {
        return 0.0;
    }
    let (mut i, mut j) = (0usize, 0usize);
    let mut u = 0.0;
    let mut area = 0.0;
    while i < n && j < m {
        // next breakpoint is min((i+1)/n, (j+1)/m), compared exactly
        let (ni, nj) = ((i + 1) * m, (j + 1) * n);
        let next = if ni <= nj { (i + 1) as f64 / n as f64 } else { (j + 1) as f64 / m as f64 };
        area += (next - u) * (x[i] - y[j]).abs();
        u = next;
        if ni <= nj {
            i += 1;
        }
        if nj <= ni {
            j += 1;
        }
    }
    area
}

/// Mean absolute percentage error (in percent) between the 1st..99th
/// percentiles, skipping percentiles where the historical value is ~0.
pub fn percentile_mape(sim: &[f64], hist: &[f64]) -> f64 {
    let (s, h) = (sorted(sim), sorted(hist));
    let errs: Vec<f64> = (1..=99)
        .filter_map(|p| {
            let q = p as f64 / 100.0;
            let hv = quantile_sorted(&h, q);
            (hv.abs() >= 1e-12).then(|| (quantile_sorted(&s, q) - hv).abs() / hv.abs())
        })
        .collect();
    if errs.is_empty() {
        0.0
    } else {
        100.0 * mean(&errs)
    }
}

pub fn compare_distributions(sim_returns: &[f64], hist_returns: &[f64]) -> Result<DistComparison, MetricsError> {
    for xs in [sim_returns, hist_returns] {
        if xs.len() < MIN_SERIES_LEN {
            return Err(MetricsError::TooShort { need: MIN_SERIES_LEN, got: xs.len() });
        }
    }
    Ok(DistComparison {
        ks_statistic: ks_statistic(sim_returns, hist_returns),
        wasserstein_1: wasserstein_1(sim_returns, hist_returns),
        mape: percentile_mape(sim_returns, hist_returns),
        deltas: MetricReport::default(),
    })
}

/// Metrics of the historical path, path-averaged metrics of the ensemble, and
/// the comparison of pooled simulated returns against historical returns.
pub fn evaluate_candidate(ensemble: &PathEnsemble, historical: &[f64]) -> Result<CandidateEvaluation, MetricsError> {
    let hist = summary_stats(historical)?;
    let per_path: Vec<MetricReport> = ensemble.paths().map(summary_stats).collect::<Result<_, _>>()?;
    let simulated = MetricReport::average(&per_path);
    let deltas = MetricReport::average(&per_path.iter().map(|r| r.abs_diff(&hist)).collect::<Vec<_>>());
    let pooled: Vec<f64> = ensemble.paths().flat_map(log_returns).collect();
    let mut comparison = compare_distributions(&pooled, &log_returns(historical))?;
    comparison.deltas = deltas;
    Ok(CandidateEvaluation { historical: hist, simulated, comparison })
}
