use serde::{Deserialize, Serialize};

use super::SimulateError;
use crate::quantile::sort_ascending;

pub const DEFAULT_BIN_COUNT: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramMarkers {
    pub current_tolerance: f64,
    pub optimised_tolerance: f64,
}

/// Equal-width binning of a sample with tolerance markers for plotting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramData {
    /// `counts.len() + 1` strictly increasing edges.
    pub bin_edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub markers: HistogramMarkers,
}

impl HistogramData {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

fn equal_width_edges(lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    let width = (hi - lo) / bins as f64;
    let mut edges: Vec<f64> = (0..bins).map(|i| lo + i as f64 * width).collect();
    edges.push(hi);
    edges
}

/// Bins `values` over `[min, max]`; the maximum falls in the last bin.
///
/// A zero-width range is widened to a unit interval centred on the value.
pub fn histogram(values: &[f64], bin_count: usize, markers: HistogramMarkers) -> Result<HistogramData, SimulateError> {
    if bin_count == 0 {
        return Err(SimulateError::ZeroBins);
    }
    let sorted = sort_ascending(values)?;
    let (min, max) = (sorted.min(), sorted.max());
    let mut edges = equal_width_edges(min, max, bin_count);
    if edges.windows(2).any(|w| w[0] >= w[1]) {
        let mid = min + (max - min) / 2.0;
        edges = equal_width_edges(mid - 0.5, mid + 0.5, bin_count);
    }
    let (lo, hi) = (edges[0], edges[bin_count]);
    let width = (hi - lo) / bin_count as f64;

    let mut counts = vec![0usize; bin_count];
    for &v in sorted.as_slice() {
        let mut idx = (((v - lo) / width).floor().max(0.0) as usize).min(bin_count - 1);
        // Correct for rounding in the division against the stored edges.
        while idx > 0 && v < edges[idx] {
            idx -= 1;
        }
        while idx + 1 < bin_count && v >= edges[idx + 1] {
            idx += 1;
        }
        counts[idx] += 1;
    }
    Ok(HistogramData {
        bin_edges: edges,
        counts,
        markers,
    })
}
