//! Descriptive summaries: type-7 quantiles (plain and with integer multiplicities), moments.

use crate::scalar::Scalar;

/// Type-7 (linear interpolation) sample quantile. `p` is clamped to `[0, 1]`.
/// Returns `None` on empty input.
pub fn quantile<T: Scalar>(values: &[T], p: T) -> Option<T> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    Some(quantile_sorted(&sorted, p))
}

/// Type-7 quantile of data that is already sorted ascending.
pub fn quantile_sorted<T: Scalar>(sorted: &[T], p: T) -> T {
    let n = sorted.len();
    let p = p.max(T::zero()).min(T::one());
    let h = T::from_usize_lossy(n - 1) * p;
    let lo = h.floor();
    let lo_idx = lo.to_usize().unwrap_or(0).min(n - 1);
    let hi_idx = (lo_idx + 1).min(n - 1);
    let frac = h - lo;
    sorted[lo_idx] + frac * (sorted[hi_idx] - sorted[lo_idx])
}

/// Type-7 quantile of the vector obtained by repeating `values[i]` `counts[i]` times.
/// Counts are expected to be non-negative integers (bootstrap multiplicities).
pub fn quantile_with_counts(values: &[f64], counts: &[f64], p: f64) -> Option<f64> {
    let mut pairs: Vec<(f64, f64)> =
        values.iter().zip(counts).filter(|(_, &c)| c > 0.0).map(|(&v, &c)| (v, c)).collect();
    if pairs.is_empty() {
        return None;
    }
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
    let total: f64 = pairs.iter().map(|(_, c)| c).sum();
    let h = (total - 1.0).max(0.0) * p.clamp(0.0, 1.0);
    let lo = h.floor();
    let frac = h - lo;
    let at = |pos: f64| -> f64 {
        // value of the order statistic with 0-based index `pos`
        let mut cum = 0.0;
        for &(v, c) in &pairs {
            cum += c;
            if pos < cum - 1e-9 {
                return v;
            }
        }
        pairs[pairs.len() - 1].0
    };
    let lo_v = at(lo);
    if frac == 0.0 {
        return Some(lo_v);
    }
    let hi_v = at((lo + 1.0).min(total - 1.0));
    Some(lo_v + frac * (hi_v - lo_v))
}

pub fn mean<T: Scalar>(values: &[T]) -> Option<T> {
    if values.is_empty() {
        return None;
    }
    Some(values.iter().copied().sum::<T>() / T::from_usize_lossy(values.len()))
}

/// Sample standard deviation with the `n - 1` denominator.
pub fn std_dev<T: Scalar>(values: &[T]) -> Option<T> {
    if values.len() < 2 {
        return None;
    }
    let m = mean(values)?;
    let ss: T = values.iter().map(|&v| (v - m) * (v - m)).sum();
    Some((ss / T::from_usize_lossy(values.len() - 1)).sqrt())
}

pub fn median<T: Scalar>(values: &[T]) -> Option<T> {
    quantile(values, T::lit(0.5))
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(p)
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    Normal::new(0.0, 1.0).expect("standard normal").cdf(x)
}
