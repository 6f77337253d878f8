//! Small statistics helpers shared by the Monte Carlo routines.

use serde::{Deserialize, Serialize};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Wilson score interval for `successes` out of `trials` at normal quantile `z`.
pub fn wilson_interval(successes: u64, trials: u64, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    // clamp so that the interval always contains p despite rounding
    ((centre - half).max(0.0).min(p), (centre + half).min(1.0).max(p))
}

/// Binomial standard error at success probability `p`.
pub fn binomial_stderr(p: f64, trials: u64) -> f64 {
    (p * (1.0 - p) / trials as f64).sqrt()
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub samples: u64,
}

impl MeanEstimate {
    /// Summarises `values` in order; summation order is fixed so the result is
    /// bitwise reproducible.
    pub fn from_samples(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { mean: f64::NAN, stderr: f64::NAN, samples: 0 };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Self { mean, stderr: (var / n as f64).sqrt(), samples: n as u64 }
    }

    pub fn interval(&self, k: f64) -> (f64, f64) {
        (self.mean - k * self.stderr, self.mean + k * self.stderr)
    }

    /// `x` lies in the `k`-standard-error interval, up to float round-off.
    pub fn contains(&self, x: f64, k: f64) -> bool {
        (x - self.mean).abs() <= k * self.stderr + 1e-12 * x.abs().max(1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wilson_contains_point_estimate() {
        for &(s, n) in &[(0u64, 100u64), (1, 100), (50, 100), (100, 100), (3, 100_000)] {
            let (lo, hi) = wilson_interval(s, n, Z95);
            let p = s as f64 / n as f64;
            assert!(lo <= p && p <= hi, "{s}/{n}: [{lo}, {hi}]");
            assert!((0.0..=1.0).contains(&lo) && (0.0..=1.0).contains(&hi));
        }
    }

    #[test]
    fn wilson_matches_textbook_value() {
        // 10 of 100, z = 1.96: [0.0552, 0.1744]
        let (lo, hi) = wilson_interval(10, 100, 1.96);
        assert!((lo - 0.05522).abs() < 1e-4);
        assert!((hi - 0.17437).abs() < 1e-4);
    }

    #[test]
    fn mean_estimate_basic() {
        let m = MeanEstimate::from_samples(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m.mean, 2.5);
        assert!((m.stderr - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
        assert!(m.contains(2.5, 0.0));
    }
}
