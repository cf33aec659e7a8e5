//! Per-part tolerance optimisation with the defect guard.
//!
//! For one part: take the false-call values, sort them, pick the candidate
//! tolerance at percentile `p`, then make sure the largest confirmed defect
//! is still flagged. If it is not, the candidate is replaced by
//! `max_defect + margin`. Because flagging is monotone in the value, the
//! largest defect being flagged implies every defect is.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{PartDataset, PartKey};
use crate::quantile::{percentile_value, sort_ascending, Percentile, QuantileError};

#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
pub enum OptimizeError {
    #[error("safety margin {0} must be finite and non-negative")]
    InvalidMargin(f64),
    #[error("safety margin {margin} added to max defect {max_defect} does not flag it")]
    GuardIneffective { max_defect: f64, margin: f64 },
    #[error("candidate tolerance {0} is not finite")]
    NonFiniteCandidate(f64),
    #[error("quantile: {0}")]
    Quantile(String),
}

impl From<QuantileError> for OptimizeError {
    fn from(e: QuantileError) -> Self {
        Self::Quantile(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum FlagDirection {
    /// Values strictly below the tolerance are flagged.
    #[default]
    BelowTolerance,
}

/// How a measurement is compared against its tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FlaggingRule {
    pub direction: FlagDirection,
}

impl FlaggingRule {
    pub fn flags(&self, value: f64, tolerance: f64) -> bool {
        match self.direction {
            FlagDirection::BelowTolerance => value < tolerance,
        }
    }
}

/// `value < tolerance`.
#[inline]
pub fn flag(value: f64, tolerance: f64) -> bool {
    FlaggingRule::default().flags(value, tolerance)
}

/// Number of `values` flagged under `tolerance`.
pub fn count_flagged(values: &[f64], tolerance: f64) -> usize {
    values.iter().filter(|&&v| flag(v, tolerance)).count()
}

/// Safety margin added above the largest defect when the guard fires.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SafetyMargin {
    /// Same units as the measurements.
    Absolute(f64),
    /// Fraction of the part's current tolerance magnitude.
    Relative(f64),
}

impl Default for SafetyMargin {
    fn default() -> Self {
        Self::Relative(0.01)
    }
}

impl SafetyMargin {
    pub fn resolve(&self, current_tolerance: f64) -> f64 {
        match *self {
            Self::Absolute(m) => m,
            Self::Relative(f) => f * current_tolerance.abs(),
        }
    }

    /// Rejects margins that can never be positive.
    pub fn validate(&self) -> Result<(), OptimizeError> {
        let raw = match *self {
            Self::Absolute(m) | Self::Relative(m) => m,
        };
        if raw.is_finite() && raw > 0.0 {
            Ok(())
        } else {
            Err(OptimizeError::InvalidMargin(raw))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuardOutcome {
    pub applied: bool,
    pub max_defect_value: Option<f64>,
    pub safety_margin: f64,
}

/// Ensures the largest defect stays flagged under the returned tolerance.
///
/// Returns `(final_tolerance, outcome)`. The guard only ever raises the
/// candidate. A zero margin (or one too small to move `max_defect` in
/// floating point) is an error when the guard has to fire.
pub fn defect_guard(candidate: f64, defects: &[f64], margin: f64) -> Result<(f64, GuardOutcome), OptimizeError> {
    if !(margin.is_finite() && margin >= 0.0) {
        return Err(OptimizeError::InvalidMargin(margin));
    }
    if !candidate.is_finite() {
        return Err(OptimizeError::NonFiniteCandidate(candidate));
    }
    let max_defect = defects.iter().copied().reduce(f64::max);
    let outcome = |applied| GuardOutcome {
        applied,
        max_defect_value: max_defect,
        safety_margin: margin,
    };
    match max_defect {
        None => Ok((candidate, outcome(false))),
        Some(m) if flag(m, candidate) => Ok((candidate, outcome(false))),
        Some(m) => {
            let raised = m + margin;
            if !flag(m, raised) {
                return Err(OptimizeError::GuardIneffective { max_defect: m, margin });
            }
            Ok((raised, outcome(true)))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToleranceProposal {
    pub key: PartKey,
    pub models: Vec<String>,
    pub current_tolerance: f64,
    pub percentile_used: Percentile,
    pub candidate_tolerance: f64,
    pub final_tolerance: f64,
    pub guard: GuardOutcome,
    pub false_calls_before: usize,
    pub false_calls_after: usize,
    pub defects_total: usize,
    pub defects_flagged_after: usize,
    /// The guard pushed the tolerance above the one in use today.
    pub exceeds_current: bool,
}

impl ToleranceProposal {
    pub fn false_calls_removed(&self) -> usize {
        self.false_calls_before.saturating_sub(self.false_calls_after)
    }

    pub fn reduction_fraction(&self) -> f64 {
        if self.false_calls_before == 0 {
            0.0
        } else {
            self.false_calls_removed() as f64 / self.false_calls_before as f64
        }
    }
}

/// Runs the full per-part procedure at percentile `p`.
///
/// A part with no false calls keeps its current tolerance.
pub fn optimize_part(
    part: &PartDataset,
    p: Percentile,
    margin: SafetyMargin,
) -> Result<ToleranceProposal, OptimizeError> {
    margin.validate()?;
    let margin_abs = margin.resolve(part.current_tolerance);
    let false_calls = &part.false_call_values;
    let defects = part.defect_values();

    let candidate = if false_calls.is_empty() {
        part.current_tolerance
    } else {
        percentile_value(&sort_ascending(false_calls)?, p)
    };
    let (final_tolerance, guard) = defect_guard(candidate, &defects, margin_abs)?;

    Ok(ToleranceProposal {
        key: part.key.clone(),
        models: part.models.clone(),
        current_tolerance: part.current_tolerance,
        percentile_used: p,
        candidate_tolerance: candidate,
        final_tolerance,
        guard,
        false_calls_before: false_calls.len(),
        false_calls_after: count_flagged(false_calls, final_tolerance),
        defects_total: defects.len(),
        defects_flagged_after: count_flagged(&defects, final_tolerance),
        exceeds_current: final_tolerance > part.current_tolerance,
    })
}

/// Proposals for every part, key-sorted, plus per-part failures.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BatchOutcome {
    pub proposals: Vec<ToleranceProposal>,
    pub errors: Vec<(PartKey, OptimizeError)>,
}

/// Optimises all parts in parallel; output order follows key order.
pub fn optimize_all(datasets: &BTreeMap<PartKey, PartDataset>, p: Percentile, margin: SafetyMargin) -> BatchOutcome {
    let results: Vec<(PartKey, Result<ToleranceProposal, OptimizeError>)> = datasets
        .par_iter()
        .map(|(key, part)| (key.clone(), optimize_part(part, p, margin)))
        .collect();
    let mut outcome = BatchOutcome::default();
    for (key, result) in results {
        match result {
            Ok(proposal) => outcome.proposals.push(proposal),
            Err(e) => outcome.errors.push((key, e)),
        }
    }
    outcome
}

/// One JSON object per line, in the order given.
pub fn proposals_to_jsonl(proposals: &[ToleranceProposal]) -> String {
    let mut out = String::new();
    for p in proposals {
        out.push_str(&serde_json::to_string(p).expect("proposal serialises"));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pct(p: f64) -> Percentile {
        Percentile::new(p).unwrap()
    }

    fn tens() -> Vec<f64> {
        (1..=10).map(|i| f64::from(i) * 10.0).collect()
    }

    fn part(false_calls: Vec<f64>, defects: Vec<f64>, tol: f64) -> PartDataset {
        PartDataset::new(PartKey::new("P1", "solder"), tol)
            .with_false_calls(false_calls)
            .with_defects(defects)
    }

    #[test]
    fn flag_is_strict() {
        assert!(flag(41.0, 42.62));
        assert!(!flag(42.62, 42.62));
        assert!(!flag(50.0, 42.62));
    }

    #[test]
    fn guard_branches() {
        let (t, g) = defect_guard(35.0, &[], 0.5).unwrap();
        assert_eq!((t, g.applied, g.max_defect_value), (35.0, false, None));

        let (t, g) = defect_guard(35.0, &[30.0, 33.0], 0.5).unwrap();
        assert_eq!((t, g.applied, g.max_defect_value), (35.0, false, Some(33.0)));

        let (t, g) = defect_guard(35.0, &[30.0, 38.0], 0.5).unwrap();
        assert_eq!((t, g.applied, g.max_defect_value), (38.5, true, Some(38.0)));
        assert_eq!(g.safety_margin, 0.5);
    }

    #[test]
    fn guard_fires_when_max_defect_equals_candidate() {
        let (t, g) = defect_guard(35.0, &[35.0], 0.5).unwrap();
        assert!(g.applied);
        assert_eq!(t, 35.5);
    }

    #[test]
    fn zero_margin_guard_is_ineffective() {
        assert_eq!(
            defect_guard(35.0, &[38.0], 0.0),
            Err(OptimizeError::GuardIneffective {
                max_defect: 38.0,
                margin: 0.0
            })
        );
        // Zero margin is harmless while the guard does not fire.
        assert!(defect_guard(35.0, &[30.0], 0.0).is_ok());
        // A margin that vanishes in floating point is caught too.
        assert!(matches!(
            defect_guard(0.0, &[1e20], 1e-3),
            Err(OptimizeError::GuardIneffective { .. })
        ));
        assert!(matches!(
            defect_guard(0.0, &[1.0], -1.0),
            Err(OptimizeError::InvalidMargin(_))
        ));
    }

    #[test]
    fn ten_value_example_without_defects() {
        let prop = optimize_part(&part(tens(), vec![], 101.0), pct(80.0), SafetyMargin::Absolute(1.0)).unwrap();
        assert!((prop.candidate_tolerance - 82.0).abs() < 1e-12);
        assert_eq!(prop.final_tolerance, prop.candidate_tolerance);
        assert!(!prop.guard.applied);
        assert_eq!(prop.false_calls_before, 10);
        assert_eq!(prop.false_calls_after, 8);
        assert!((prop.reduction_fraction() - 0.2).abs() < 1e-12);
        assert!(!prop.exceeds_current);
    }

    #[test]
    fn ten_value_example_with_guard() {
        let prop = optimize_part(&part(tens(), vec![85.0], 101.0), pct(80.0), SafetyMargin::Absolute(1.0)).unwrap();
        assert!(prop.guard.applied);
        assert_eq!(prop.final_tolerance, 86.0);
        assert_eq!(prop.false_calls_after, 8);
        assert_eq!(prop.defects_total, 1);
        assert_eq!(prop.defects_flagged_after, 1);
    }

    #[test]
    fn no_false_calls_keeps_current_tolerance() {
        for p in [0.0, 50.0, 100.0] {
            let prop = optimize_part(&part(vec![], vec![20.0], 25.0), pct(p), SafetyMargin::default()).unwrap();
            assert_eq!(prop.candidate_tolerance, 25.0);
            assert_eq!(prop.final_tolerance, 25.0);
            assert_eq!(prop.false_calls_after, 0);
            assert_eq!(prop.defects_flagged_after, 1);
            assert!(!prop.guard.applied);
        }
    }

    #[test]
    fn guard_may_exceed_current_tolerance() {
        let prop = optimize_part(
            &part(vec![10.0, 20.0], vec![99.9], 100.0),
            pct(80.0),
            SafetyMargin::default(),
        )
        .unwrap();
        assert!(prop.guard.applied);
        assert!((prop.final_tolerance - 100.9).abs() < 1e-9);
        assert!(prop.exceeds_current);
        assert_eq!(prop.false_calls_after, 2);
    }

    #[test]
    fn relative_margin_resolves_against_current_tolerance() {
        assert_eq!(SafetyMargin::Relative(0.01).resolve(45.0), 0.45);
        assert_eq!(SafetyMargin::Absolute(0.3).resolve(45.0), 0.3);
        assert!(SafetyMargin::Absolute(0.0).validate().is_err());
        assert!(SafetyMargin::Relative(f64::NAN).validate().is_err());
        assert!(optimize_part(&part(tens(), vec![], 101.0), pct(80.0), SafetyMargin::Absolute(0.0)).is_err());
    }

    #[test]
    fn optimize_all_sorts_and_isolates_errors() {
        let mut map = BTreeMap::new();
        let b = PartDataset::new(PartKey::new("B", "solder"), 101.0).with_false_calls(tens());
        let a = PartDataset::new(PartKey::new("A", "solder"), 101.0).with_false_calls(tens());
        map.insert(b.key.clone(), b);
        map.insert(a.key.clone(), a);
        let out = optimize_all(&map, pct(80.0), SafetyMargin::Absolute(1.0));
        let keys: Vec<_> = out.proposals.iter().map(|p| p.key.part_number.as_str()).collect();
        assert_eq!(keys, vec!["A", "B"]);
        assert!(out.errors.is_empty());

        // A part at tolerance 0 resolves a relative margin to zero.
        let bad = PartDataset::new(PartKey::new("C", "solder"), 0.0)
            .with_false_calls([-5.0, -4.0])
            .with_defects([-0.5]);
        map.insert(bad.key.clone(), bad);
        let out = optimize_all(&map, pct(0.0), SafetyMargin::Relative(0.01));
        assert_eq!(out.proposals.len(), 2);
        assert_eq!(out.errors.len(), 1);
        assert!(matches!(out.errors[0].1, OptimizeError::GuardIneffective { .. }));

        assert!(optimize_all(&BTreeMap::new(), pct(80.0), SafetyMargin::default())
            .proposals
            .is_empty());
    }

    #[test]
    fn proposal_export_uses_field_names() {
        let prop = optimize_part(&part(tens(), vec![85.0], 101.0), pct(80.0), SafetyMargin::Absolute(1.0)).unwrap();
        let line = proposals_to_jsonl(&[prop]);
        let v: serde_json::Value = serde_json::from_str(line.trim_end()).unwrap();
        for field in [
            "key",
            "current_tolerance",
            "percentile_used",
            "candidate_tolerance",
            "final_tolerance",
            "guard",
            "false_calls_before",
            "false_calls_after",
            "defects_total",
            "defects_flagged_after",
            "exceeds_current",
        ] {
            assert!(v.get(field).is_some(), "missing {field}");
        }
        assert_eq!(v["guard"]["applied"], true);
        assert_eq!(v["percentile_used"], 80.0);
    }
}
