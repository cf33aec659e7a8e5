//! Holdout validation: pick the most defective parts, split their defects
//! 70/30, recalibrate on the training share and check that every held-out
//! defect is still flagged.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{DefectObservation, PartDataset, PartKey};
use crate::optimizer::{count_flagged, optimize_part, OptimizeError, SafetyMargin, ToleranceProposal};
use crate::quantile::Percentile;

pub const DEFAULT_TOP_K: usize = 5;
pub const DEFAULT_TRAIN_RATIO: f64 = 0.7;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValidationError {
    #[error("sample is empty")]
    EmptySample,
    #[error("train ratio {0} must lie strictly between 0 and 1")]
    InvalidRatio(f64),
    #[error("top-k must be at least 1")]
    InvalidTopK,
    #[error("no part has a confirmed defect")]
    NoDefectiveParts,
    #[error(transparent)]
    Optimize(#[from] OptimizeError),
}

/// How defects are assigned to the training and holdout shares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SplitPolicy {
    /// Earliest defects train, latest are held out. Falls back to a seeded
    /// shuffle when any defect lacks a timestamp.
    Chronological {
        fallback_seed: u64,
    },
    Shuffled {
        seed: u64,
    },
}

impl Default for SplitPolicy {
    fn default() -> Self {
        Self::Chronological { fallback_seed: 0 }
    }
}

/// What a split actually did, recorded alongside it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SplitMethod {
    Chronological,
    Shuffled { seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefectSplit {
    pub key: PartKey,
    pub train: Vec<DefectObservation>,
    pub holdout: Vec<DefectObservation>,
    pub method: SplitMethod,
}

impl DefectSplit {
    pub fn train_values(&self) -> Vec<f64> {
        self.train.iter().map(|d| d.value).collect()
    }

    pub fn holdout_values(&self) -> Vec<f64> {
        self.holdout.iter().map(|d| d.value).collect()
    }
}

/// `floor(ratio * n)`, immune to `0.7 * 10 = 6.999..` style rounding.
pub fn train_size(n: usize, ratio: f64) -> usize {
    ((ratio * n as f64) + 1e-9).floor() as usize
}

pub fn split_defects(
    key: &PartKey,
    defects: &[DefectObservation],
    ratio: f64,
    policy: SplitPolicy,
) -> Result<DefectSplit, ValidationError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(ValidationError::InvalidRatio(ratio));
    }
    if defects.is_empty() {
        return Err(ValidationError::EmptySample);
    }

    let mut order: Vec<usize> = (0..defects.len()).collect();
    let all_timestamped = defects.iter().all(|d| d.timestamp.is_some());
    let method = match policy {
        SplitPolicy::Chronological { .. } if all_timestamped => {
            // Stable: equal timestamps keep input order.
            order.sort_by_key(|&i| defects[i].timestamp);
            SplitMethod::Chronological
        }
        SplitPolicy::Chronological { fallback_seed: seed } | SplitPolicy::Shuffled { seed } => {
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            SplitMethod::Shuffled { seed }
        }
    };

    let k = train_size(defects.len(), ratio);
    let (train_idx, holdout_idx) = order.split_at(k);
    Ok(DefectSplit {
        key: key.clone(),
        train: train_idx.iter().map(|&i| defects[i]).collect(),
        holdout: holdout_idx.iter().map(|&i| defects[i]).collect(),
        method,
    })
}

/// Keys with the most confirmed defects, ties broken by ascending key.
pub fn select_top_parts(datasets: &BTreeMap<PartKey, PartDataset>, k: usize) -> Vec<PartKey> {
    let mut defective: Vec<(&PartKey, usize)> = datasets
        .iter()
        .map(|(key, ds)| (key, ds.defect_count()))
        .filter(|&(_, n)| n > 0)
        .collect();
    // BTreeMap order is ascending by key, so a stable sort keeps ties sorted.
    defective.sort_by_key(|&(_, n)| std::cmp::Reverse(n));
    defective.into_iter().take(k).map(|(key, _)| key.clone()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecallValue {
    pub tp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub recall: f64,
}

/// `tp / (tp + fn)`, with an empty denominator counting as perfect recall.
pub fn recall(tp: usize, fn_: usize) -> RecallValue {
    let total = tp + fn_;
    let recall = if total == 0 { 1.0 } else { tp as f64 / total as f64 };
    RecallValue { tp, fn_, recall }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ValidationStatus {
    Pass,
    Fail,
}

impl ValidationStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Pass => "Pass",
            Self::Fail => "Fail",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationRow {
    pub key: PartKey,
    pub train_defect_count: usize,
    pub holdout_defect_count: usize,
    pub holdout_flagged: usize,
    pub holdout_escaped: usize,
    pub status: ValidationStatus,
}

/// Checks a proposal, computed on training defects only, against unseen
/// defects of the same part.
pub fn validate_part(proposal: &ToleranceProposal, holdout: &[f64]) -> ValidationRow {
    let flagged = count_flagged(holdout, proposal.final_tolerance);
    let escaped = holdout.len() - flagged;
    ValidationRow {
        key: proposal.key.clone(),
        train_defect_count: proposal.defects_total,
        holdout_defect_count: holdout.len(),
        holdout_flagged: flagged,
        holdout_escaped: escaped,
        status: if escaped == 0 {
            ValidationStatus::Pass
        } else {
            ValidationStatus::Fail
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub percentile: Percentile,
    pub margin: SafetyMargin,
    pub top_k: usize,
    pub train_ratio: f64,
    pub policy: SplitPolicy,
}

impl ProtocolConfig {
    pub fn new(percentile: Percentile) -> Self {
        Self {
            percentile,
            margin: SafetyMargin::default(),
            top_k: DEFAULT_TOP_K,
            train_ratio: DEFAULT_TRAIN_RATIO,
            policy: SplitPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartError {
    pub key: PartKey,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub rows: Vec<ValidationRow>,
    pub overall: RecallValue,
    /// Proposals recalibrated on the training share, one per row.
    pub proposals: Vec<ToleranceProposal>,
    pub splits: Vec<DefectSplit>,
    /// Training defects left unflagged by their own proposal. Always zero
    /// while the guard holds; checked on every run.
    pub training_escapes: usize,
    pub errors: Vec<PartError>,
}

impl ValidationReport {
    pub fn all_pass(&self) -> bool {
        self.errors.is_empty() && self.rows.iter().all(|r| r.status == ValidationStatus::Pass)
    }
}

struct PartResult {
    row: ValidationRow,
    proposal: ToleranceProposal,
    split: DefectSplit,
    training_escapes: usize,
}

fn validate_one(part: &PartDataset, config: &ProtocolConfig) -> Result<PartResult, ValidationError> {
    let split = split_defects(&part.key, &part.defects, config.train_ratio, config.policy)?;
    let training = PartDataset {
        defects: split.train.clone(),
        ..part.clone()
    };
    let proposal = optimize_part(&training, config.percentile, config.margin)?;
    let train_values = split.train_values();
    let training_escapes = train_values.len() - count_flagged(&train_values, proposal.final_tolerance);
    let row = validate_part(&proposal, &split.holdout_values());
    Ok(PartResult {
        row,
        proposal,
        split,
        training_escapes,
    })
}

/// Runs the holdout protocol over the `top_k` most defective parts.
pub fn run_validation_protocol(
    datasets: &BTreeMap<PartKey, PartDataset>,
    config: &ProtocolConfig,
) -> Result<ValidationReport, ValidationError> {
    if config.top_k == 0 {
        return Err(ValidationError::InvalidTopK);
    }
    if !(config.train_ratio > 0.0 && config.train_ratio < 1.0) {
        return Err(ValidationError::InvalidRatio(config.train_ratio));
    }
    config.margin.validate()?;
    let selected = select_top_parts(datasets, config.top_k);
    if selected.is_empty() {
        return Err(ValidationError::NoDefectiveParts);
    }

    let results: Vec<(PartKey, Result<PartResult, ValidationError>)> = selected
        .par_iter()
        .map(|key| (key.clone(), validate_one(&datasets[key], config)))
        .collect();

    let mut report = ValidationReport {
        rows: Vec::new(),
        overall: recall(0, 0),
        proposals: Vec::new(),
        splits: Vec::new(),
        training_escapes: 0,
        errors: Vec::new(),
    };
    let (mut tp, mut fn_) = (0, 0);
    for (key, result) in results {
        match result {
            Ok(part) => {
                tp += part.row.holdout_flagged;
                fn_ += part.row.holdout_escaped;
                report.training_escapes += part.training_escapes;
                report.rows.push(part.row);
                report.proposals.push(part.proposal);
                report.splits.push(part.split);
            }
            Err(e) => report.errors.push(PartError {
                key,
                error: e.to_string(),
            }),
        }
    }
    report.overall = recall(tp, fn_);
    Ok(report)
}

/// Delimited validation table followed by an overall-recall footer line.
pub fn validation_report_csv(report: &ValidationReport) -> String {
    let mut out = String::from("part_number,inspection_type,train_defects,holdout_defects,flagged,escaped,status\n");
    for r in &report.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.key.part_number,
            r.key.inspection_type,
            r.train_defect_count,
            r.holdout_defect_count,
            r.holdout_flagged,
            r.holdout_escaped,
            r.status.as_str()
        );
    }
    let _ = writeln!(
        out,
        "overall_recall,{},{},{}",
        report.overall.tp, report.overall.fn_, report.overall.recall
    );
    out
}
