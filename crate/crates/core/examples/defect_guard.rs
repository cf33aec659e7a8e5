//! The defect guard: when a confirmed defect would slip past the candidate,
//! the tolerance is lifted just above it.
//!
//! Run with `cargo run -p aoitol-core --example defect_guard`.

use aoitol_core::optimizer::{defect_guard, flag, OptimizeError};

fn main() {
    let candidate = 30.0;
    let margin = 0.4;

    let (tol, outcome) = defect_guard(candidate, &[10.0, 20.0], margin).expect("guard");
    println!("defects below candidate: tolerance {tol}, applied {}", outcome.applied);

    let defects = [12.0, 31.5];
    let (tol, outcome) = defect_guard(candidate, &defects, margin).expect("guard");
    println!("defect at 31.5:          tolerance {tol}, applied {}", outcome.applied);
    for d in defects {
        println!("  flag({d}, {tol}) = {}", flag(d, tol));
    }

    match defect_guard(candidate, &[31.5], 0.0) {
        Err(OptimizeError::GuardIneffective { max_defect, margin }) => {
            println!("zero margin cannot protect {max_defect} (margin {margin})")
        }
        other => println!("unexpected: {other:?}"),
    }
}
