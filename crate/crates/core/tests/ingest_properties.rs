use aoitol_core::ingest::{ingest, to_canonical_string, ColumnMapping};
use proptest::prelude::*;

const HEADER: &str = "model,part_number,inspection_type,value,tolerance,machine_flagged,disposition,timestamp";

/// Rows that are mostly valid with a sprinkling of every failure mode.
fn row() -> impl Strategy<Value = String> {
    let model = prop_oneof![Just("A"), Just("B"), Just("")];
    let part = prop_oneof![Just("P1"), Just("P2"), Just("P3")];
    let value = prop_oneof![
        8 => (0.0f64..60.0).prop_map(|v| format!("{v}")),
        1 => Just(String::new()),
        1 => Just("\"4,5\"".to_owned()),
    ];
    // P3 sometimes carries a second tolerance.
    let tolerance = prop_oneof![8 => Just("50"), 1 => Just("45.5"), 1 => Just("x")];
    let flagged = prop_oneof![Just("true"), Just("false"), Just("TRUE"), Just("maybe")];
    let disposition = prop_oneof![
        Just("false_call"),
        Just("true_defect"),
        Just("not_reviewed"),
        Just("bogus")
    ];
    let ts = prop_oneof![
        Just(""),
        Just("2024-02-03T04:05:06Z"),
        Just("2024-02-03T04:05:06"),
        Just("never")
    ];
    (model, part, value, tolerance, flagged, disposition, ts).prop_map(|(m, p, v, t, f, d, ts)| {
        let tol = if p == "P3" { t } else { "50" };
        format!("{m},{p},solder,{v},{tol},{f},{d},{ts}")
    })
}

fn document() -> impl Strategy<Value = String> {
    prop::collection::vec(row(), 0..80).prop_map(|rows| {
        let mut s = String::from(HEADER);
        s.push('\n');
        for r in rows {
            s.push_str(&r);
            s.push('\n');
        }
        s
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn every_row_is_accounted_for(doc in document()) {
        let out = ingest(doc.as_bytes(), &ColumnMapping::default()).unwrap();
        let in_datasets: usize = out
            .datasets
            .values()
            .map(|d| d.false_call_values.len() + d.defects.len() + d.not_reviewed_values.len() + d.pass_count)
            .sum();
        prop_assert_eq!(out.rows_read, doc.lines().count() - 1);
        prop_assert_eq!(in_datasets + out.rejected + out.quarantined, out.rows_read);
        prop_assert_eq!(out.log.len(), out.rejected + out.quarantined);
        // One reason per row.
        let mut rows: Vec<usize> = out.log.entries.iter().map(|r| r.row).collect();
        rows.dedup();
        prop_assert_eq!(rows.len(), out.log.len());
        for ds in out.datasets.values() {
            prop_assert!(ds.check_invariants().is_ok());
        }
    }

    #[test]
    fn ingest_is_deterministic(doc in document()) {
        let a = ingest(doc.as_bytes(), &ColumnMapping::default()).unwrap();
        let b = ingest(doc.as_bytes(), &ColumnMapping::default()).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn canonical_export_round_trips(doc in document()) {
        let first = ingest(doc.as_bytes(), &ColumnMapping::default()).unwrap();
        let text = to_canonical_string(first.datasets.values());
        let second = ingest(text.as_bytes(), &ColumnMapping::default()).unwrap();
        prop_assert_eq!(&first.datasets, &second.datasets);
    }
}
