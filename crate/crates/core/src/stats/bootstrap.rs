//! Percentile bootstrap.
//!
//! Resamples are drawn from a single ChaCha8 stream seeded with `seed`: for
//! each of the `B` resamples, `n` indices in order, each `below(n)` (see
//! [`crate::sampling`]). Percentiles use linear interpolation between order
//! statistics at position `(B - 1) * q`.

use crate::error::{Error, Result};
use crate::sampling;
use crate::stats::binomial::{Interval, IntervalMethod};

pub const DEFAULT_RESAMPLES: usize = 100;

/// Statistic value on each of `resamples` bootstrap resamples.
pub fn bootstrap_distribution<T, F>(
    sample: &[T],
    statistic: F,
    resamples: usize,
    seed: u64,
) -> Result<Vec<f64>>
where
    T: Clone,
    F: Fn(&[T]) -> f64,
{
    if sample.is_empty() {
        return Err(Error::Empty("bootstrap sample"));
    }
    if resamples == 0 {
        return Err(Error::invalid("at least one bootstrap resample is required"));
    }
    let n = sample.len();
    let mut rng = sampling::rng(seed);
    let mut buf = Vec::with_capacity(n);
    let mut out = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        buf.clear();
        buf.extend((0..n).map(|_| sample[sampling::below(&mut rng, n as u64) as usize].clone()));
        out.push(statistic(&buf));
    }
    Ok(out)
}

/// Linear-interpolation percentile, `q` in `[0, 1]`. `values` need not be sorted.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty());
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

/// `(alpha/2, 1 - alpha/2)` percentiles of the bootstrap distribution. The
/// bounds are in the units of `statistic`.
pub fn bootstrap_percentile<T, F>(
    sample: &[T],
    statistic: F,
    resamples: usize,
    alpha: f64,
    seed: u64,
) -> Result<Interval>
where
    T: Clone,
    F: Fn(&[T]) -> f64,
{
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha {alpha} outside (0, 1)")));
    }
    let dist = bootstrap_distribution(sample, statistic, resamples, seed)?;
    Ok(Interval {
        lower: percentile(&dist, alpha / 2.0),
        upper: percentile(&dist, 1.0 - alpha / 2.0),
        alpha,
        method: IntervalMethod::BootstrapPercentile,
    })
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_sample_zero_width() {
        let ci = bootstrap_percentile(&[0.5; 12], mean, 100, 0.05, 3).unwrap();
        assert_eq!((ci.lower, ci.upper), (0.5, 0.5));
    }

    #[test]
    fn deterministic_under_seed() {
        let xs: Vec<f64> = (0..30).map(|i| (i % 7) as f64).collect();
        let a = bootstrap_percentile(&xs, mean, 100, 0.05, 42).unwrap();
        let b = bootstrap_percentile(&xs, mean, 100, 0.05, 42).unwrap();
        assert_eq!(a, b);
        assert!(a.lower <= mean(&xs) && mean(&xs) <= a.upper);
    }

    #[test]
    fn percentile_interpolates() {
        let v = [4.0, 1.0, 3.0, 2.0];
        assert_eq!(percentile(&v, 0.0), 1.0);
        assert_eq!(percentile(&v, 1.0), 4.0);
        assert_eq!(percentile(&v, 0.5), 2.5);
        assert!((percentile(&v, 0.025) - 1.075).abs() < 1e-12);
    }

    #[test]
    fn empty_sample_rejected() {
        let empty: [f64; 0] = [];
        assert!(bootstrap_percentile(&empty, mean, 100, 0.05, 1).is_err());
    }
}
