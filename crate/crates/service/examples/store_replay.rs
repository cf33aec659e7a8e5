//! The store is an append-only event log; reopening it replays every upload,
//! run and decision.
//!
//! Run with `cargo run -p aoitol-service --example store_replay`.

use aoitol_core::ingest::to_canonical_string;
use aoitol_core::quantile::Percentile;
use aoitol_core::simulate::{generate_synthetic, SyntheticSpec};
use aoitol_service::{Decision, RunParams, Store};
use chrono::Utc;

fn main() {
    let dir = tempfile::tempdir().expect("temp dir");
    let path = dir.path().join("events.jsonl");
    let data = generate_synthetic(&SyntheticSpec {
        part_count: 4,
        ..SyntheticSpec::default()
    })
    .expect("feasible spec");

    let (version, run_id, proposal_id) = {
        let store = Store::open(&path).expect("open log");
        let (version, _) = store
            .put_dataset(to_canonical_string(data.values()), "example")
            .expect("valid csv");
        let params = RunParams::new(version.version_id.clone(), Percentile::new(75.0).expect("valid"));
        let (run, _) = store.put_run(params).expect("run");
        let proposal_id = run.proposals[0].proposal_id.clone();
        store
            .decide(&proposal_id, Decision::Approved, "qe-lead", None, Utc::now())
            .expect("first decision");
        (version.version_id, run.run_id.clone(), proposal_id)
    };
    println!(
        "log holds {} lines",
        std::fs::read_to_string(&path).expect("log").lines().count()
    );

    let reopened = Store::open(&path).expect("replay");
    println!("events replayed: {}", reopened.event_count());
    println!("dataset {version} present: {}", reopened.dataset(&version).is_some());
    println!("run {run_id} present: {}", reopened.run(&run_id).is_some());
    println!(
        "decision on {proposal_id}: {:?}",
        reopened.decision(&proposal_id).map(|d| d.decision)
    );
    print!("{}", reopened.export_tolerances(&version).expect("known version"));
}
