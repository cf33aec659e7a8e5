//! Holdout validation on synthetic data: top parts by defect count, 70/30
//! split, recalibrate on the training share, measure recall on the rest.
//!
//! Run with `cargo run -p aoitol-core --example validation_protocol`.

use aoitol_core::quantile::Percentile;
use aoitol_core::simulate::{generate_synthetic, SyntheticSpec};
use aoitol_core::validation::{run_validation_protocol, validation_report_csv, ProtocolConfig, SplitPolicy};

fn main() {
    let data = generate_synthetic(&SyntheticSpec::default()).expect("default spec is feasible");
    let mut config = ProtocolConfig::new(Percentile::new(80.0).expect("valid percentile"));

    let report = run_validation_protocol(&data, &config).expect("data has defects");
    print!("{}", validation_report_csv(&report));
    println!("all pass: {}", report.all_pass());

    config.policy = SplitPolicy::Shuffled { seed: 7 };
    let shuffled = run_validation_protocol(&data, &config).expect("data has defects");
    println!("\nshuffled split (seed 7):");
    print!("{}", validation_report_csv(&shuffled));
}
