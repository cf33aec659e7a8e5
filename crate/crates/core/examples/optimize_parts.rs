//! Optimise a handful of parts and print the before/after table.
//!
//! Run with `cargo run -p aoitol-core --example optimize_parts`.

use std::collections::BTreeMap;

use aoitol_core::ingest::{PartDataset, PartKey};
use aoitol_core::optimizer::{optimize_all, SafetyMargin};
use aoitol_core::quantile::Percentile;
use aoitol_core::simulate::{aggregate_report, render_table};

fn main() {
    let parts = [
        PartDataset::new(PartKey::new("C1001", "solder"), 40.0)
            .with_model("M01")
            .with_false_calls([31.0, 33.5, 34.0, 35.2, 36.8, 37.1, 38.0, 38.4, 39.0, 39.6])
            .with_defects([12.0, 18.5]),
        PartDataset::new(PartKey::new("R2040", "bridge"), 25.0)
            .with_model("M02")
            .with_false_calls([20.0, 21.0, 22.5, 23.0, 24.0, 24.5])
            .with_defects([22.0]),
        PartDataset::new(PartKey::new("U0007", "missing"), 60.0)
            .with_model("M01")
            .with_false_calls([55.0, 56.0, 57.0, 58.0, 59.0]),
    ];
    let datasets: BTreeMap<PartKey, PartDataset> = parts.into_iter().map(|d| (d.key.clone(), d)).collect();

    let p = Percentile::new(80.0).expect("valid percentile");
    let batch = optimize_all(&datasets, p, SafetyMargin::default());
    print!("{}", render_table(&aggregate_report(&batch.proposals)));

    for prop in &batch.proposals {
        println!(
            "{}: candidate {:.3} final {:.3} (guard {})",
            prop.key,
            prop.candidate_tolerance,
            prop.final_tolerance,
            if prop.guard.applied { "raised it" } else { "idle" }
        );
    }
}
