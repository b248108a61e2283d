//! Small statistics helpers for Monte-Carlo error bars.

use serde::Serialize;

/// A Monte-Carlo point estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
}

impl Estimate {
    pub fn new(value: f64, std_error: f64) -> Self {
        Estimate { value, std_error }
    }

    /// `|value - target| <= k * std_error`.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.value - target).abs() <= k * self.std_error
    }

    pub fn z_score(&self, target: f64) -> f64 {
        if self.std_error > 0.0 {
            (self.value - target) / self.std_error
        } else if self.value == target {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64
}

/// Ratio estimator `sum(num) / sum(den)` with a batch-means standard error.
///
/// `num[b]` and `den[b]` are the totals in batch `b`. Batches should be long
/// compared with the correlation time of the underlying process.
pub fn batch_ratio(num: &[f64], den: &[f64]) -> Estimate {
    assert_eq!(num.len(), den.len());
    let total_num: f64 = num.iter().sum();
    let total_den: f64 = den.iter().sum();
    let value = if total_den > 0.0 {
        total_num / total_den
    } else {
        f64::NAN
    };
    let k = num.len();
    if k < 2 || total_den <= 0.0 {
        return Estimate::new(value, f64::INFINITY);
    }
    // Linearized variance of a ratio estimator over batches.
    let mean_den = total_den / k as f64;
    let resid: Vec<f64> = num
        .iter()
        .zip(den)
        .map(|(&a, &b)| (a - value * b) / mean_den)
        .collect();
    let se = (variance(&resid) / k as f64).sqrt();
    Estimate::new(value, se)
}

/// Kolmogorov-Smirnov statistic of `samples` against Exponential(rate).
pub fn ks_exponential(samples: &[f64], rate: f64) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let cdf = 1.0 - (-rate * x).exp();
        let lo = i as f64 / n;
        let hi = (i + 1) as f64 / n;
        d = d.max((cdf - lo).abs()).max((hi - cdf).abs());
    }
    d
}

/// Asymptotic one-sample KS critical value at significance 0.001.
pub fn ks_critical_001(n: usize) -> f64 {
    1.9495 / (n as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batch_ratio_of_constant_batches_has_zero_error() {
        let e = batch_ratio(&[1.0, 1.0, 1.0], &[4.0, 4.0, 4.0]);
        assert_eq!(e.value, 0.25);
        assert_eq!(e.std_error, 0.0);
    }

    #[test]
    fn ks_detects_wrong_rate() {
        let xs: Vec<f64> = (1..1000).map(|k| -(1.0 - k as f64 / 1000.0).ln()).collect();
        assert!(ks_exponential(&xs, 1.0) < 0.01);
        assert!(ks_exponential(&xs, 2.0) > 0.1);
    }
}
