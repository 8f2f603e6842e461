//! Two-sample Kolmogorov-Smirnov statistics and small numeric helpers.
//!
//! ECDFs are right-continuous, and all tied values are consumed before the
//! gap is measured, so binary samples are handled exactly.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::analysis::AnalysisError;

fn sorted(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Walks the merged order statistics of `a` and `b` and returns the extreme
/// values of `F_a - F_b` over all thresholds as `(max, min)`.
fn ecdf_gap_extremes(a: &[f64], b: &[f64]) -> (f64, f64) {
    let (a, b) = (sorted(a), sorted(b));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let (mut hi, mut lo) = (0.0f64, 0.0f64);
    while i < a.len() || j < b.len() {
        let x = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        let gap = i as f64 / na - j as f64 / nb;
        hi = hi.max(gap);
        lo = lo.min(gap);
    }
    (hi, lo)
}

/// `sup_x |F_a(x) - F_b(x)|`.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> Result<f64, AnalysisError> {
    if a.is_empty() || b.is_empty() {
        return Err(AnalysisError::UndefinedStatistic(
            "KS statistic needs two nonempty samples".into(),
        ));
    }
    let (hi, lo) = ecdf_gap_extremes(a, b);
    Ok(hi.max(-lo))
}

/// KS statistic for two binary samples given their counts of zeros.
/// Agrees with [`ks_statistic`] on the expanded samples.
pub fn ks_statistic_binary(zeros_a: usize, n_a: usize, zeros_b: usize, n_b: usize) -> f64 {
    (zeros_a as f64 / n_a as f64 - zeros_b as f64 / n_b as f64).abs()
}

/// One-sided statistic `D+ = sup_x (F_a(x) - F_b(x))`.
pub fn ks_one_sided_statistic(a: &[f64], b: &[f64]) -> Result<f64, AnalysisError> {
    if a.is_empty() || b.is_empty() {
        return Err(AnalysisError::UndefinedStatistic(
            "KS statistic needs two nonempty samples".into(),
        ));
    }
    Ok(ecdf_gap_extremes(a, b).0)
}

/// One-tailed two-sample KS test of the alternative that `stats_s` is
/// stochastically smaller than `stats_0`, using the asymptotic tail
/// `P(D+ >= d) ≈ exp(-2 d² nm/(n+m))`.
pub fn ks_one_tailed_test(stats_s: &[f64], stats_0: &[f64]) -> Result<f64, AnalysisError> {
    if stats_s.len() < 2 || stats_0.len() < 2 {
        return Err(AnalysisError::UndefinedStatistic(
            "one-tailed KS test needs at least two values per side".into(),
        ));
    }
    let d = ks_one_sided_statistic(stats_s, stats_0)?;
    let (n, m) = (stats_s.len() as f64, stats_0.len() as f64);
    let en = n * m / (n + m);
    Ok((-2.0 * en * d * d).exp().clamp(0.0, 1.0))
}

/// Standard normal CDF.
pub fn std_normal_cdf(z: f64) -> f64 {
    Normal::standard().cdf(z)
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1 denominator).
pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Median of a sample; `NaN` when empty.
pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let v = sorted(xs);
    let k = v.len() / 2;
    if v.len() % 2 == 1 {
        v[k]
    } else {
        0.5 * (v[k - 1] + v[k])
    }
}

/// Linear-interpolated quantile, `q` in `[0, 1]`.
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let v = sorted(xs);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}
