//! Generate seeded synthetic inspection data and write it as canonical CSV.
//!
//! Run with `cargo run -p aoitol-core --example synthetic_dataset -- out.csv`.

use aoitol_core::ingest::to_canonical_string;
use aoitol_core::simulate::{generate_synthetic, DefectDistribution, SyntheticSpec};

fn main() {
    let spec = SyntheticSpec {
        part_count: 10,
        defects: DefectDistribution::Adversarial {
            near_fraction: 0.99,
            gap_fraction: 0.05,
            spread_fraction: 0.2,
        },
        seed: 2024,
        ..SyntheticSpec::default()
    };
    let data = generate_synthetic(&spec).expect("feasible spec");
    for ds in data.values() {
        println!(
            "{} tol {:.3}: {} false calls, {} defects",
            ds.key,
            ds.current_tolerance,
            ds.false_call_values.len(),
            ds.defect_count()
        );
    }
    let csv = to_canonical_string(data.values());
    match std::env::args().nth(1) {
        Some(path) => std::fs::write(&path, csv).expect("writable path"),
        None => println!("\n{}", csv.lines().take(5).collect::<Vec<_>>().join("\n")),
    }
}
