use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::SimulateError;
use crate::ingest::{PartDataset, PartKey};
use crate::optimizer::{optimize_all, SafetyMargin};
use crate::quantile::Percentile;

/// Aggregate outcome of optimising every part at one percentile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub p: Percentile,
    pub total_false_calls_before: usize,
    pub total_false_calls_after: usize,
    pub reduction_fraction: f64,
    pub defects_total: usize,
    pub defects_flagged: usize,
    pub guard_activations: usize,
    pub parts_exceeding_current: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepAnnotation {
    pub p: Percentile,
    pub key: PartKey,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub points: Vec<SweepPoint>,
    /// Parts that failed to optimise at some percentile; excluded from that
    /// point's totals.
    pub annotations: Vec<SweepAnnotation>,
}

/// 50, 55, ..., 95 and 99.
pub fn default_grid() -> Vec<Percentile> {
    (10..=19)
        .map(|i| f64::from(i) * 5.0)
        .chain([99.0])
        .map(|p| Percentile::new(p).expect("grid values lie in [0, 100]"))
        .collect()
}

/// Parses `a,b,c` or an inclusive `start:stop:step` range.
pub fn parse_percentile_list(raw: &str) -> Result<Vec<Percentile>, SimulateError> {
    let bad = || SimulateError::BadPercentileList(raw.to_owned());
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad());
    let values: Vec<f64> = if raw.contains(':') {
        let parts: Vec<&str> = raw.split(':').collect();
        let [start, stop, step] = parts.as_slice() else {
            return Err(bad());
        };
        let (start, stop, step) = (num(start)?, num(stop)?, num(step)?);
        if !(step > 0.0 && step.is_finite() && start <= stop) {
            return Err(bad());
        }
        let count = ((stop - start) / step + 1e-9).floor() as usize;
        (0..=count).map(|i| start + i as f64 * step).collect()
    } else {
        raw.split(',')
            .filter(|s| !s.trim().is_empty())
            .map(num)
            .collect::<Result<_, _>>()?
    };
    if values.is_empty() {
        return Err(SimulateError::EmptyPercentiles);
    }
    values
        .into_iter()
        .map(|p| Percentile::new(p).map_err(SimulateError::from))
        .collect()
}

fn point_at(
    datasets: &BTreeMap<PartKey, PartDataset>,
    p: Percentile,
    margin: SafetyMargin,
) -> (SweepPoint, Vec<SweepAnnotation>) {
    let batch = optimize_all(datasets, p, margin);
    let mut point = SweepPoint {
        p,
        total_false_calls_before: 0,
        total_false_calls_after: 0,
        reduction_fraction: 0.0,
        defects_total: 0,
        defects_flagged: 0,
        guard_activations: 0,
        parts_exceeding_current: 0,
    };
    for prop in &batch.proposals {
        point.total_false_calls_before += prop.false_calls_before;
        point.total_false_calls_after += prop.false_calls_after;
        point.defects_total += prop.defects_total;
        point.defects_flagged += prop.defects_flagged_after;
        point.guard_activations += usize::from(prop.guard.applied);
        point.parts_exceeding_current += usize::from(prop.exceeds_current);
    }
    if point.total_false_calls_before > 0 {
        let removed = point
            .total_false_calls_before
            .saturating_sub(point.total_false_calls_after);
        point.reduction_fraction = removed as f64 / point.total_false_calls_before as f64;
    }
    let notes = batch
        .errors
        .into_iter()
        .map(|(key, e)| SweepAnnotation {
            p,
            key,
            error: e.to_string(),
        })
        .collect();
    (point, notes)
}

/// Simulates every percentile; points come back ordered by `p`.
pub fn sweep(
    datasets: &BTreeMap<PartKey, PartDataset>,
    percentiles: &[Percentile],
    margin: SafetyMargin,
) -> Result<SweepOutcome, SimulateError> {
    if percentiles.is_empty() {
        return Err(SimulateError::EmptyPercentiles);
    }
    let mut results: Vec<(SweepPoint, Vec<SweepAnnotation>)> =
        percentiles.par_iter().map(|&p| point_at(datasets, p, margin)).collect();
    results.sort_by(|a, b| a.0.p.value().total_cmp(&b.0.p.value()));
    let mut out = SweepOutcome::default();
    for (point, notes) in results {
        out.points.push(point);
        out.annotations.extend(notes);
    }
    Ok(out)
}
