//! Small sample-statistics helpers shared by the analysis harness and CLI.

use rand::Rng;
use statrs::distribution::{ContinuousCDF, StudentsT};

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance (Welford); exactly zero for constant data.
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let mut m = 0.0;
    let mut m2 = 0.0;
    for (k, &x) in xs.iter().enumerate() {
        let delta = x - m;
        m += delta / (k + 1) as f64;
        m2 += delta * (x - m);
    }
    m2 / (xs.len() - 1) as f64
}

pub fn std_error(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    (variance(xs) / xs.len() as f64).sqrt()
}

/// Empirical quantile with linear interpolation on sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Interval {
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
}

/// Two-sided percentile bootstrap interval for the mean.
pub fn bootstrap_mean_ci<R: Rng + ?Sized>(
    xs: &[f64],
    resamples: usize,
    level: f64,
    rng: &mut R,
) -> Interval {
    let n = xs.len();
    let estimate = mean(xs);
    if n < 2 {
        return Interval {
            estimate,
            lower: estimate,
            upper: estimate,
            level,
        };
    }
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| xs[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let alpha = 1.0 - level;
    Interval {
        estimate,
        lower: quantile(&means, alpha / 2.0),
        upper: quantile(&means, 1.0 - alpha / 2.0),
        level,
    }
}

/// One-sided Student-t lower confidence bound for the mean.
pub fn t_lower_bound(xs: &[f64], level: f64) -> f64 {
    let n = xs.len();
    if n < 2 {
        return f64::NEG_INFINITY;
    }
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .expect("valid degrees of freedom")
        .inverse_cdf(level);
    mean(xs) - t * std_error(xs)
}
