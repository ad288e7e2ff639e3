//! Statistics over simulated price series and trend-investor behavior.

pub mod experiments;
mod pca;

pub use pca::{pca_weights, Pca};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::trendrl::{ActionId, DecisionRecord};

fn central_moments(xs: &[f64]) -> Result<(f64, f64, f64, f64)> {
    if xs.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "{} observations, need at least 4",
            xs.len()
        )));
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &x in xs {
        let d = x - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    let (m2, m3, m4) = (m2 / n, m3 / n, m4 / n);
    if m2 == 0.0 || m2 <= 1e-24 * mean * mean {
        return Err(Error::InsufficientData("zero variance".into()));
    }
    Ok((mean, m2, m3, m4))
}

/// Pearson kurtosis `m4 / m2^2` (3 for a normal distribution).
pub fn kurtosis(xs: &[f64]) -> Result<f64> {
    let (_, m2, _, m4) = central_moments(xs)?;
    Ok(m4 / (m2 * m2))
}

/// Third standardized central moment `m3 / m2^1.5`.
pub fn skewness(xs: &[f64]) -> Result<f64> {
    let (_, m2, m3, _) = central_moments(xs)?;
    Ok(m3 / m2.powf(1.5))
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64
}

pub const RETURN_WINDOW: usize = 50;

/// Price changes over consecutive non-overlapping windows. Samples are taken
/// at the last index of every complete window, so a history of `n` points
/// yields `n / window - 1` changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnSeries {
    pub window: usize,
    pub changes: Vec<f64>,
}

impl ReturnSeries {
    pub fn new(history: &[f64], window: usize) -> Self {
        let samples: Vec<f64> = (1..=history.len() / window).map(|k| history[k * window - 1]).collect();
        Self {
            window,
            changes: samples.windows(2).map(|w| w[1] - w[0]).collect(),
        }
    }

    pub fn default_window(history: &[f64]) -> Self {
        Self::new(history, RETURN_WINDOW)
    }
}

/// Least-squares fit of `log(value)` on `log(rank)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZipfFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Number of ranks entering the regression.
    pub ranks_used: usize,
    pub keep_fraction: f64,
}

/// Fraction of ranks (largest values first) kept by [`zipf_fit`].
pub const ZIPF_KEEP_FRACTION: f64 = 0.9;

/// Rank-size fit on the top 90% of ranks.
pub fn zipf_fit(xs: &[f64]) -> Result<ZipfFit> {
    zipf_fit_with(xs, ZIPF_KEEP_FRACTION)
}

pub fn zipf_fit_with(xs: &[f64], keep_fraction: f64) -> Result<ZipfFit> {
    let mut values: Vec<f64> = xs.iter().copied().filter(|&x| x > 0.0).collect();
    if values.len() < 10 {
        return Err(Error::InsufficientData(format!(
            "{} positive values, need at least 10",
            values.len()
        )));
    }
    values.sort_by(|a, b| b.total_cmp(a));
    let keep = ((values.len() as f64 * keep_fraction).round() as usize).clamp(2, values.len());
    let pts: Vec<(f64, f64)> = values[..keep]
        .iter()
        .enumerate()
        .map(|(i, v)| (((i + 1) as f64).ln(), v.ln()))
        .collect();
    let (slope, intercept, r_squared) = linear_fit(&pts);
    Ok(ZipfFit {
        slope,
        intercept,
        r_squared,
        ranks_used: keep,
        keep_fraction,
    })
}

/// Ordinary least squares `y = slope * x + intercept`; returns
/// `(slope, intercept, r_squared)`. A constant response fits exactly.
pub fn linear_fit(pts: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let r_squared = if syy > 0.0 { (sxy * sxy) / (sxx * syy) } else { 1.0 };
    (slope, intercept, r_squared)
}

/// Slope of a series against its index.
pub fn trend_slope(ys: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = ys.iter().enumerate().map(|(i, &y)| (i as f64, y)).collect();
    linear_fit(&pts).0
}

/// Best bid across dealers minus best offer across dealers, per tick:
/// `max_i(mid_i - b/2) - min_j(mid_j + b/2)`. Positive values are riskless
/// cross-dealer profits.
pub fn arbitrage_series(mm_histories: &[Vec<f64>], bid_offer: f64) -> Result<Vec<f64>> {
    if mm_histories.len() < 2 {
        return Err(Error::InsufficientData("arbitrage needs at least two dealers".into()));
    }
    let len = mm_histories.iter().map(Vec::len).min().unwrap_or(0);
    Ok((0..len)
        .map(|t| {
            let mids = mm_histories.iter().map(|h| h[t]);
            let (lo, hi) = mids.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), m| (lo.min(m), hi.max(m)));
            (hi - bid_offer / 2.0) - (lo + bid_offer / 2.0)
        })
        .collect())
}

/// Arbitrage for a single cross-section of mids.
pub fn arbitrage(mids: &[f64], bid_offer: f64) -> f64 {
    let hi = mids.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = mids.iter().copied().fold(f64::INFINITY, f64::min);
    hi - lo - bid_offer
}

/// Mean of `max(arbitrage, 0)` over a series.
pub fn mean_positive(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().map(|x| x.max(0.0)).sum::<f64>() / xs.len() as f64
}

/// Average ranks (1-based) with ties sharing their mean rank.
pub fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let (mx, my) = (mean(xs), mean(ys));
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankCorrelation {
    pub rho: f64,
    /// Two-sided p-value from the t approximation with `n - 2` degrees of freedom.
    pub p_two_sided: f64,
    /// One-sided p-value for a negative association.
    pub p_negative: f64,
    pub n: usize,
}

pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<RankCorrelation> {
    if xs.len() != ys.len() || xs.len() < 4 {
        return Err(Error::InsufficientData("rank correlation needs >= 4 pairs".into()));
    }
    let rho = pearson(&ranks(xs), &ranks(ys));
    let n = xs.len();
    let df = (n - 2) as f64;
    let t = rho * (df / (1.0 - rho * rho).max(1e-300)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    let lower = dist.cdf(t);
    Ok(RankCorrelation {
        rho,
        p_two_sided: (2.0 * lower.min(1.0 - lower)).min(1.0),
        p_negative: lower,
        n,
    })
}

/// Per-run market-maker positioning against return skew.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositioningPoint {
    /// Time-average of the summed dealer inventories.
    pub positioning: f64,
    /// Skew of the 50-tick changes of the global mid; zero when undefined.
    pub skewness: f64,
}

/// Pairs each run's mean total dealer inventory with the skew of its
/// 50-tick price changes. Each run is `(total_inventory_series, mean_mid_series)`.
pub fn skew_vs_positioning(runs: &[(Vec<f64>, Vec<f64>)]) -> Result<Vec<PositioningPoint>> {
    if runs.len() < 2 {
        return Err(Error::InsufficientData("need at least two runs".into()));
    }
    Ok(runs
        .iter()
        .map(|(inventory, prices)| PositioningPoint {
            positioning: if inventory.is_empty() { 0.0 } else { mean(inventory) },
            skewness: skewness(&ReturnSeries::default_window(prices).changes).unwrap_or(0.0),
        })
        .collect())
}

/// Action counts, indexed by action id.
pub fn action_histogram(decisions: &[DecisionRecord]) -> [u64; ActionId::COUNT] {
    let mut counts = [0u64; ActionId::COUNT];
    for d in decisions {
        counts[d.action.index()] += 1;
    }
    counts
}

/// Chi-square goodness-of-fit p-value against a uniform distribution.
pub fn chi_square_uniform_p(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    if total == 0 || counts.len() < 2 {
        return 1.0;
    }
    let e = total as f64 / counts.len() as f64;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
    let dist = ChiSquared::new((counts.len() - 1) as f64).expect("positive degrees of freedom");
    1.0 - dist.cdf(stat)
}

/// Price change over the trailing `lag` ticks of a series.
pub fn momentum(prices: &[f64], lag: usize) -> f64 {
    match prices.len() {
        0 => 0.0,
        n => prices[n - 1] - prices[n.saturating_sub(lag + 1)],
    }
}

/// Position of the latest price within the min-max range of the whole
/// series, in `[0, 100]`. `None` when the range is degenerate.
pub fn range_percentile(prices: &[f64]) -> Option<f64> {
    let last = *prices.last()?;
    let lo = prices.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = prices.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (hi > lo).then(|| (100.0 * (last - lo) / (hi - lo)).clamp(0.0, 100.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionStateStats {
    pub action: ActionId,
    pub count: usize,
    pub mean_momentum: f64,
    pub mean_percentile: Option<f64>,
    pub momenta: Vec<f64>,
    pub percentiles: Vec<f64>,
}

/// Momentum and range-percentile distributions at decision time, per action.
pub fn strategy_state_analysis(decisions: &[DecisionRecord]) -> Vec<ActionStateStats> {
    ActionId::all()
        .map(|action| {
            let picked: Vec<&DecisionRecord> = decisions.iter().filter(|d| d.action == action).collect();
            let momenta: Vec<f64> = picked.iter().map(|d| d.momentum).collect();
            let percentiles: Vec<f64> = picked.iter().filter_map(|d| d.percentile).collect();
            ActionStateStats {
                action,
                count: picked.len(),
                mean_momentum: if momenta.is_empty() { 0.0 } else { mean(&momenta) },
                mean_percentile: (!percentiles.is_empty()).then(|| mean(&percentiles)),
                momenta,
                percentiles,
            }
        })
        .collect()
}

/// Mean range percentile over sell decisions and over buy decisions.
pub fn sell_buy_percentiles(decisions: &[DecisionRecord]) -> (Option<f64>, Option<f64>) {
    use crate::trendrl::Direction;
    let side = |dir: Direction| {
        let xs: Vec<f64> = decisions
            .iter()
            .filter(|d| d.action.direction() == Some(dir))
            .filter_map(|d| d.percentile)
            .collect();
        (!xs.is_empty()).then(|| mean(&xs))
    };
    (side(Direction::Sell), side(Direction::Buy))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub terminal_mean: f64,
    pub target_mean: f64,
    pub gap: f64,
}

pub const CONVERGENCE_WINDOW: usize = 500;
pub const CONVERGENCE_MIN_TICKS: usize = 3000;

/// Mean of the final 500 ticks of the global mid against the unweighted mean
/// of value-investor targets. `None` when there are no value investors.
pub fn mean_convergence_check(history: &[f64], targets: &[f64]) -> Result<Option<ConvergenceReport>> {
    if targets.is_empty() {
        return Ok(None);
    }
    if history.len() < CONVERGENCE_MIN_TICKS {
        return Err(Error::InsufficientData(format!(
            "history of {} ticks, need {CONVERGENCE_MIN_TICKS}",
            history.len()
        )));
    }
    let terminal_mean = mean(&history[history.len() - CONVERGENCE_WINDOW..]);
    let target_mean = mean(targets);
    Ok(Some(ConvergenceReport {
        terminal_mean,
        target_mean,
        gap: terminal_mean - target_mean,
    }))
}

/// Price behavior around an instantaneous drop in value-investor targets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrashTechnicals {
    pub post_min: f64,
    pub terminal_mean: f64,
    /// `terminal_mean - post_min`: how far the drop overshot its resting level.
    pub overshoot: f64,
    pub variance_before: f64,
    pub variance_after: f64,
}

/// Compares the `window` ticks either side of `crash_tick` and the final
/// `window` ticks of the run.
pub fn crash_technicals(history: &[f64], crash_tick: usize, window: usize) -> Result<CrashTechnicals> {
    if crash_tick < window || crash_tick + window >= history.len() {
        return Err(Error::InsufficientData("crash window exceeds history".into()));
    }
    let post = &history[crash_tick..];
    let post_min = post.iter().copied().fold(f64::INFINITY, f64::min);
    let terminal_mean = mean(&history[history.len() - window..]);
    let before = ReturnSeries::default_window(&history[crash_tick - window..=crash_tick]).changes;
    let after = ReturnSeries::default_window(&history[crash_tick..=crash_tick + window]).changes;
    Ok(CrashTechnicals {
        post_min,
        terminal_mean,
        overshoot: terminal_mean - post_min,
        variance_before: variance(&before),
        variance_after: variance(&after),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_point_kurtosis() {
        let xs: Vec<f64> = (0..100).map(|i| if i % 2 == 0 { -1.0 } else { 1.0 }).collect();
        assert!((kurtosis(&xs).unwrap() - 1.0).abs() < 1e-12);
        assert!(skewness(&xs).unwrap().abs() < 1e-12);
    }

    #[test]
    fn degenerate_samples_rejected() {
        assert!(kurtosis(&[1.0, 2.0, 3.0]).is_err());
        assert!(kurtosis(&[5.0; 10]).is_err());
    }

    #[test]
    fn negation_flips_skew() {
        let xs = [0.1, 0.5, 2.0, 0.3, 7.0, 0.2];
        let neg: Vec<f64> = xs.iter().map(|x| -x).collect();
        assert_eq!(skewness(&xs).unwrap(), -skewness(&neg).unwrap());
    }

    #[test]
    fn return_series_telescopes() {
        let history: Vec<f64> = (0..3001).map(|i| (i as f64 * 0.01).sin() * 5.0 + 100.0).collect();
        let r = ReturnSeries::new(&history, 50);
        assert_eq!(r.changes.len(), 3001 / 50 - 1);
        let total: f64 = r.changes.iter().sum();
        assert!((total - (history[2999] - history[49])).abs() < 1e-9);
    }

    #[test]
    fn exact_zipf_slope() {
        let xs: Vec<f64> = (1..=100).map(|r| 1.0 / r as f64).collect();
        let fit = zipf_fit_with(&xs, 1.0).unwrap();
        assert!((fit.slope + 1.0).abs() < 1e-9);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        let fit = zipf_fit(&xs).unwrap();
        assert!((fit.slope + 1.0).abs() < 1e-9);
        assert_eq!(fit.ranks_used, 90);
    }

    #[test]
    fn constant_zipf_is_flat() {
        let fit = zipf_fit(&[2.0; 20]).unwrap();
        assert_eq!(fit.slope, 0.0);
        assert!(zipf_fit(&[1.0; 9]).is_err());
    }

    #[test]
    fn arbitrage_examples() {
        let flat = vec![vec![100.0; 5]; 3];
        assert!(arbitrage_series(&flat, 1.0).unwrap().iter().all(|&a| a == -1.0));
        let pair = vec![vec![100.0], vec![102.0]];
        assert_eq!(arbitrage_series(&pair, 1.0).unwrap(), vec![1.0]);
        assert!(arbitrage_series(&pair[..1], 1.0).is_err());
    }

    #[test]
    fn ranks_with_ties() {
        assert_eq!(ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn spearman_detects_monotone_decrease() {
        let xs: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| -x * x).collect();
        let c = spearman(&xs, &ys).unwrap();
        assert!((c.rho + 1.0).abs() < 1e-12);
        assert!(c.p_negative < 1e-6);
    }

    #[test]
    fn percentile_and_momentum() {
        assert_eq!(range_percentile(&[5.0; 10]), None);
        assert_eq!(momentum(&[5.0; 60], 50), 0.0);
        let up: Vec<f64> = (0..100).map(|i| i as f64).collect();
        assert_eq!(range_percentile(&up), Some(100.0));
        assert_eq!(momentum(&up, 50), 50.0);
        assert_eq!(range_percentile(&[1.0, 3.0, 2.0]), Some(50.0));
    }

    #[test]
    fn convergence_not_applicable_without_targets() {
        assert_eq!(mean_convergence_check(&[100.0; 3001], &[]).unwrap(), None);
        let r = mean_convergence_check(&[101.0; 3001], &[90.0, 110.0]).unwrap().unwrap();
        assert!((r.gap - 1.0).abs() < 1e-12);
        assert!(mean_convergence_check(&[101.0; 100], &[90.0]).is_err());
    }

    #[test]
    fn chi_square_uniform() {
        assert!(chi_square_uniform_p(&[100, 100, 100, 100, 100, 100, 100]) > 0.99);
        assert!(chi_square_uniform_p(&[700, 0, 0, 0, 0, 0, 0]) < 1e-10);
    }
}
