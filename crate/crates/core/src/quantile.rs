//! Sorting, percentile rank and linear interpolation over false-call samples.
//!
//! The percentile used throughout the engine is the "closest ranks, C = 1"
//! convention:
//!
//! ```text
//! rank = p (n - 1) / 100 + 1
//! i    = floor(rank),  d = rank - i
//! q    = x[i] + d (x[i+1] - x[i])        (1-based indices)
//! ```
//!
//! When `rank == n` (only at `p = 100`) the maximum is returned without
//! reading past the end of the sample.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuantileError {
    #[error("sample is empty")]
    EmptySample,
    #[error("sample contains a non-finite value ({0})")]
    NonFinite(f64),
    #[error("percentile {0} is outside [0, 100]")]
    PercentileOutOfRange(f64),
}

/// A percentile in `[0, 100]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Percentile(f64);

impl Percentile {
    pub fn new(p: f64) -> Result<Self, QuantileError> {
        if (0.0..=100.0).contains(&p) {
            Ok(Self(p))
        } else {
            Err(QuantileError::PercentileOutOfRange(p))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Percentile {
    type Error = QuantileError;

    fn try_from(p: f64) -> Result<Self, Self::Error> {
        Self::new(p)
    }
}

impl From<Percentile> for f64 {
    fn from(p: Percentile) -> f64 {
        p.0
    }
}

impl fmt::Display for Percentile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.0, f)
    }
}

/// A non-empty, ascending, finite sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SortedValues(Vec<f64>);

impl SortedValues {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    /// Always false; kept for clippy's `len_without_is_empty`.
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.0[0]
    }

    pub fn max(&self) -> f64 {
        self.0[self.0.len() - 1]
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

fn check_finite(values: &[f64]) -> Result<(), QuantileError> {
    if values.is_empty() {
        return Err(QuantileError::EmptySample);
    }
    match values.iter().find(|v| !v.is_finite()) {
        Some(&bad) => Err(QuantileError::NonFinite(bad)),
        None => Ok(()),
    }
}

/// Sorts a copy of `values` ascending. Duplicates are kept.
pub fn sort_ascending(values: &[f64]) -> Result<SortedValues, QuantileError> {
    check_finite(values)?;
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(SortedValues(sorted))
}

/// Fractional 1-based rank of percentile `p` in a sample of `n` values.
///
/// Always lies in `[1, n]` for `n >= 1`.
pub fn percentile_rank(p: Percentile, n: usize) -> f64 {
    debug_assert!(n >= 1, "rank of an empty sample");
    p.0 * (n.saturating_sub(1)) as f64 / 100.0 + 1.0
}

/// Linearly interpolated percentile of a sorted sample.
pub fn percentile_value(sorted: &SortedValues, p: Percentile) -> f64 {
    let xs = sorted.as_slice();
    let n = xs.len();
    let rank = percentile_rank(p, n);
    let i = (rank.floor() as usize).clamp(1, n);
    if i == n {
        return xs[n - 1];
    }
    let d = rank - i as f64;
    let (lo, hi) = (xs[i - 1], xs[i]);
    // Rounding in `d * (hi - lo)` must not carry the result past `hi`.
    (lo + d * (hi - lo)).clamp(lo, hi)
}

/// Convenience: sort then interpolate.
pub fn percentile_of(values: &[f64], p: Percentile) -> Result<f64, QuantileError> {
    Ok(percentile_value(&sort_ascending(values)?, p))
}

/// Arithmetic mean; the baseline the percentile rank is compared against.
pub fn mean(values: &[f64]) -> Result<f64, QuantileError> {
    check_finite(values)?;
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}
