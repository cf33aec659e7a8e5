//! The five-value walkthrough: mean, rank, interpolation.
//!
//! Run with `cargo run -p aoitol-core --example worked_example`.

use aoitol_core::quantile::{mean, percentile_rank, percentile_value, sort_ascending, Percentile};

fn main() {
    let false_calls = [2.0, 28.0, 35.0, 32.0, 25.0];
    let sorted = sort_ascending(&false_calls).expect("finite sample");
    println!("sorted        {:?}", sorted.as_slice());
    println!("mean          {}", mean(&false_calls).expect("non-empty"));

    let p = Percentile::new(80.0).expect("valid percentile");
    let rank = percentile_rank(p, sorted.len());
    println!("rank at p=80  {rank:.1}");
    println!("value at p=80 {:.1}", percentile_value(&sorted, p));

    for p in [0.0, 25.0, 50.0, 75.0, 100.0] {
        let p = Percentile::new(p).expect("valid percentile");
        println!("  p={:>5}  ->  {:.2}", p, percentile_value(&sorted, p));
    }
}
