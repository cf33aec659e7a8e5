//! Sweep percentiles over a synthetic population and print the trade-off.
//!
//! Run with `cargo run -p aoitol-core --example percentile_sweep`.

use aoitol_core::optimizer::SafetyMargin;
use aoitol_core::simulate::{default_grid, generate_synthetic, parse_percentile_list, sweep, SyntheticSpec};

fn main() {
    let data = generate_synthetic(&SyntheticSpec::default()).expect("default spec is feasible");

    let outcome = sweep(&data, &default_grid(), SafetyMargin::default()).expect("non-empty grid");
    println!(
        "{:>5} {:>10} {:>10} {:>10} {:>8}",
        "p", "fc_before", "fc_after", "reduction", "guards"
    );
    for pt in &outcome.points {
        println!(
            "{:>5} {:>10} {:>10} {:>9.2}% {:>8}",
            pt.p,
            pt.total_false_calls_before,
            pt.total_false_calls_after,
            pt.reduction_fraction * 100.0,
            pt.guard_activations
        );
    }

    let ps = parse_percentile_list("70:90:10").expect("valid range");
    let coarse = sweep(&data, &ps, SafetyMargin::Absolute(0.5)).expect("non-empty list");
    println!("\nabsolute margin 0.5, p in 70:90:10");
    for pt in &coarse.points {
        println!("  p={} reduction {:.2}%", pt.p, pt.reduction_fraction * 100.0);
    }
}
