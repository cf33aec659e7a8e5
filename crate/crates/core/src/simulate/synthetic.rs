//! Seeded synthetic AOI datasets.
//!
//! Each part gets a tolerance, a batch of false-call measurements below it
//! and optionally confirmed defects. All shape parameters are expressed as
//! fractions of the part's tolerance so one spec scales across parts.

use std::collections::BTreeMap;

use chrono::{DateTime, Duration, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::SimulateError;
use crate::ingest::{DefectObservation, PartDataset, PartKey};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountRange {
    pub min: usize,
    pub max: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueRange {
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "family")]
pub enum FalseCallDistribution {
    /// Uniform on `[tol * (1 - span_fraction), tol)`.
    UniformTail { span_fraction: f64 },
    /// Normal centred `mean_offset_fraction * tol` below the tolerance,
    /// truncated to values under it.
    TruncatedNormal {
        mean_offset_fraction: f64,
        std_dev_fraction: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "family")]
pub enum DefectDistribution {
    /// Uniform on a band ending `gap_fraction * tol` below the part's
    /// smallest false call and `spread_fraction * tol` wide.
    Separated { gap_fraction: f64, spread_fraction: f64 },
    /// Drawn from the false-call distribution itself.
    Overlapping,
    /// Like `Separated`, plus one defect per part at `near_fraction * tol`.
    Adversarial {
        near_fraction: f64,
        gap_fraction: f64,
        spread_fraction: f64,
    },
}

/// Self-describing recipe for a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub part_count: usize,
    pub inspection_type: String,
    pub model_count: usize,
    pub false_calls_per_part: CountRange,
    pub tolerance: ValueRange,
    pub false_calls: FalseCallDistribution,
    pub defects: DefectDistribution,
    /// Per-false-call probability of an accompanying confirmed defect.
    pub defect_rate: f64,
    pub passes_per_part: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            part_count: 100,
            inspection_type: "solder".into(),
            model_count: 8,
            false_calls_per_part: CountRange { min: 20, max: 400 },
            tolerance: ValueRange { min: 20.0, max: 50.0 },
            false_calls: FalseCallDistribution::UniformTail { span_fraction: 0.3 },
            defects: DefectDistribution::Separated {
                gap_fraction: 0.05,
                spread_fraction: 0.2,
            },
            defect_rate: 0.05,
            passes_per_part: 5,
            seed: 42,
        }
    }
}

fn positive(x: f64) -> bool {
    x.is_finite() && x > 0.0
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), SimulateError> {
        let fail = |msg: &str| Err(SimulateError::Spec(msg.to_owned()));
        if self.inspection_type.is_empty() {
            return fail("inspection_type must be non-empty");
        }
        if self.model_count == 0 {
            return fail("model_count must be at least 1");
        }
        if self.false_calls_per_part.min > self.false_calls_per_part.max {
            return fail("false_calls_per_part.min exceeds max");
        }
        let tol = self.tolerance;
        if !(positive(tol.min) && tol.max.is_finite() && tol.min <= tol.max) {
            return fail("tolerance range must be positive and ordered");
        }
        if !(0.0..=1.0).contains(&self.defect_rate) {
            return fail("defect_rate must lie in [0, 1]");
        }
        match self.false_calls {
            FalseCallDistribution::UniformTail { span_fraction } if !positive(span_fraction) => {
                return fail("span_fraction must be positive")
            }
            FalseCallDistribution::TruncatedNormal {
                mean_offset_fraction,
                std_dev_fraction,
            } if !(positive(mean_offset_fraction) && positive(std_dev_fraction)) => {
                return fail("truncated normal needs a positive offset below tolerance and positive spread")
            }
            _ => {}
        }
        let band_ok = |gap: f64, spread: f64| gap.is_finite() && gap >= 0.0 && positive(spread);
        match self.defects {
            DefectDistribution::Separated {
                gap_fraction,
                spread_fraction,
            } if !band_ok(gap_fraction, spread_fraction) => fail("separated defects need gap >= 0 and spread > 0"),
            DefectDistribution::Adversarial {
                near_fraction,
                gap_fraction,
                spread_fraction,
            } => {
                if !(near_fraction > 0.0 && near_fraction < 1.0) {
                    // At or above 1 the planted defect would not be flagged today.
                    fail("near_fraction must lie in (0, 1)")
                } else if !band_ok(gap_fraction, spread_fraction) {
                    fail("adversarial defects need gap >= 0 and spread > 0")
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

fn below(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    loop {
        let v = rng.random_range(lo..hi);
        if v < hi {
            return v;
        }
    }
}

fn sample_false_call(rng: &mut ChaCha8Rng, dist: FalseCallDistribution, tol: f64) -> f64 {
    match dist {
        FalseCallDistribution::UniformTail { span_fraction } => below(rng, tol * (1.0 - span_fraction), tol),
        FalseCallDistribution::TruncatedNormal {
            mean_offset_fraction,
            std_dev_fraction,
        } => {
            let normal = Normal::new(tol * (1.0 - mean_offset_fraction), tol * std_dev_fraction)
                .expect("validated positive spread");
            // Mean sits below tol, so acceptance is at least one half.
            loop {
                let v = normal.sample(rng);
                if v < tol {
                    return v;
                }
            }
        }
    }
}

fn epoch() -> DateTime<Utc> {
    DateTime::from_timestamp(1_704_067_200, 0).expect("valid epoch") // 2024-01-01T00:00:00Z
}

fn generate_part(spec: &SyntheticSpec, index: usize, rng: &mut ChaCha8Rng) -> PartDataset {
    let key = PartKey::new(format!("P{:04}", index + 1), spec.inspection_type.clone());
    let tol = if spec.tolerance.min == spec.tolerance.max {
        spec.tolerance.min
    } else {
        rng.random_range(spec.tolerance.min..=spec.tolerance.max)
    };
    let n = rng.random_range(spec.false_calls_per_part.min..=spec.false_calls_per_part.max);
    let false_calls: Vec<f64> = (0..n).map(|_| sample_false_call(rng, spec.false_calls, tol)).collect();

    let mut defect_count = if spec.defect_rate > 0.0 && n > 0 {
        Binomial::new(n as u64, spec.defect_rate)
            .expect("validated rate")
            .sample(rng) as usize
    } else {
        0
    };
    let floor = false_calls.iter().copied().fold(tol, f64::min);
    let band = |rng: &mut ChaCha8Rng, gap: f64, spread: f64| {
        let hi = floor - gap * tol;
        below(rng, hi - spread * tol, hi)
    };
    let mut values: Vec<f64> = Vec::with_capacity(defect_count + 1);
    match spec.defects {
        DefectDistribution::Separated {
            gap_fraction,
            spread_fraction,
        } => values.extend((0..defect_count).map(|_| band(rng, gap_fraction, spread_fraction))),
        DefectDistribution::Overlapping => {
            values.extend((0..defect_count).map(|_| sample_false_call(rng, spec.false_calls, tol)))
        }
        DefectDistribution::Adversarial {
            near_fraction,
            gap_fraction,
            spread_fraction,
        } => {
            if spec.defect_rate > 0.0 {
                defect_count = defect_count.max(1);
                values.push(near_fraction * tol);
                values.extend((1..defect_count).map(|_| band(rng, gap_fraction, spread_fraction)));
            }
        }
    }

    // Spread defect timestamps over a year, in random order relative to value.
    let mut minutes: Vec<i64> = values.iter().map(|_| rng.random_range(0..525_600)).collect();
    minutes.sort_unstable();
    let mut order: Vec<usize> = (0..values.len()).collect();
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), rng);
    let defects = order
        .into_iter()
        .zip(minutes)
        .map(|(i, m)| DefectObservation {
            value: values[i],
            timestamp: Some(epoch() + Duration::minutes(m)),
        })
        .collect();

    PartDataset {
        key,
        models: vec![format!("M{:02}", index % spec.model_count + 1)],
        current_tolerance: tol,
        false_call_values: false_calls,
        defects,
        not_reviewed_values: Vec::new(),
        pass_count: spec.passes_per_part,
        quarantined_count: 0,
    }
}

/// Builds the datasets described by `spec`; identical specs give identical
/// output.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<BTreeMap<PartKey, PartDataset>, SimulateError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = BTreeMap::new();
    for i in 0..spec.part_count {
        let part = generate_part(spec, i, &mut rng);
        if let Err(e) = part.check_invariants() {
            return Err(SimulateError::Spec(e.to_string()));
        }
        out.insert(part.key.clone(), part);
    }
    Ok(out)
}
