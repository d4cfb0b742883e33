//! Small shared statistics helpers.

use serde::{Deserialize, Serialize};

/// Divisor convention for standard deviations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Divisor {
    /// Divide by n − 1 (unbiased sample estimator).
    Sample,
    /// Divide by n.
    Population,
}

pub(crate) fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

pub(crate) fn variance(values: &[f64], divisor: Divisor) -> f64 {
    let n = values.len();
    let denom = match divisor {
        Divisor::Sample => n - 1,
        Divisor::Population => n,
    };
    if denom == 0 {
        return 0.0;
    }
    // A constant window has zero variance exactly, not rounding dust.
    if values.windows(2).all(|w| w[0] == w[1]) {
        return 0.0;
    }
    let m = mean(values);
    values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / denom as f64
}

pub(crate) fn stdev(values: &[f64], divisor: Divisor) -> f64 {
    variance(values, divisor).sqrt()
}
