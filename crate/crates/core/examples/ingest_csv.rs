//! Parse an inspection CSV, showing rejects, quarantine and grouping.
//!
//! Run with `cargo run -p aoitol-core --example ingest_csv`.

use aoitol_core::ingest::{ingest, ColumnMapping};

const RAW: &str = "\
model,part_number,inspection_type,value,tolerance,machine_flagged,disposition,timestamp
M01,C1,solder,31.2,40,true,false_call,2024-01-02T08:00:00Z
M02,C1,solder,35.9,40,true,false_call,
M01,C1,solder,12.0,40,true,true_defect,2024-01-03T09:30:00Z
M01,C1,solder,44.0,40,false,not_reviewed,
M01,C1,solder,46.0,40,true,false_call,
M01,C1,solder,,40,true,false_call,
M01,R7,bridge,abc,25,true,false_call,
M03,R7,bridge,20.5,25,true,not_reviewed,
";

fn main() {
    let outcome = ingest(RAW.as_bytes(), &ColumnMapping::default()).expect("header is complete");
    println!(
        "rows {} accepted {} rejected {} quarantined {}",
        outcome.rows_read,
        outcome.accepted(),
        outcome.rejected,
        outcome.quarantined
    );
    for r in &outcome.log.entries {
        println!("  row {}: {:?} ({})", r.row, r.reason, r.detail);
    }
    for ds in outcome.datasets.values() {
        println!(
            "{} models {:?}: {} false calls, {} defects, {} not reviewed, {} passes",
            ds.key,
            ds.models,
            ds.false_call_values.len(),
            ds.defect_count(),
            ds.not_reviewed_values.len(),
            ds.pass_count
        );
    }
}
