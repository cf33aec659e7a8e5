//! Bin one part's false calls and mark both tolerances, as a chart would.
//!
//! Run with `cargo run -p aoitol-core --example histogram`.

use aoitol_core::optimizer::{optimize_part, SafetyMargin};
use aoitol_core::quantile::Percentile;
use aoitol_core::simulate::{generate_synthetic, histogram, HistogramMarkers, SyntheticSpec};

fn main() {
    let spec = SyntheticSpec {
        part_count: 1,
        ..SyntheticSpec::default()
    };
    let data = generate_synthetic(&spec).expect("feasible spec");
    let part = data.values().next().expect("one part");
    let proposal =
        optimize_part(part, Percentile::new(80.0).expect("valid"), SafetyMargin::default()).expect("optimises");

    let markers = HistogramMarkers {
        current_tolerance: proposal.current_tolerance,
        optimised_tolerance: proposal.final_tolerance,
    };
    let h = histogram(&part.false_call_values, 15, markers).expect("non-empty sample");
    let widest = h.counts.iter().copied().max().unwrap_or(1).max(1);
    println!("{} ({} false calls)", part.key, h.total());
    for (i, count) in h.counts.iter().enumerate() {
        let bar = "#".repeat(count * 40 / widest);
        println!(
            "[{:>8.3}, {:>8.3}) {:>4} {bar}",
            h.bin_edges[i],
            h.bin_edges[i + 1],
            count
        );
    }
    println!("current tolerance   {:.3}", markers.current_tolerance);
    println!("optimised tolerance {:.3}", markers.optimised_tolerance);
}
