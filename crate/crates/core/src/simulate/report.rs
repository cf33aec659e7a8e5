use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::optimizer::ToleranceProposal;

/// One line of the per-part breakdown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: String,
    pub part_number: String,
    pub inspection_type: String,
    pub current_tolerance: f64,
    pub false_call_count: usize,
    pub true_defect_count: usize,
    pub optimised_tolerance: f64,
    pub new_false_call_count: usize,
    pub new_true_defect_count: usize,
    pub guard_applied: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub parts: usize,
    pub total_false_calls_before: usize,
    pub total_false_calls_after: usize,
    pub reduction_fraction: f64,
    pub defects_total: usize,
    pub defects_flagged: usize,
    pub guard_activations: usize,
    pub rows: Vec<ReportRow>,
}

pub fn aggregate_report(proposals: &[ToleranceProposal]) -> AggregateReport {
    let rows: Vec<ReportRow> = proposals
        .iter()
        .map(|p| ReportRow {
            model: p.models.join("|"),
            part_number: p.key.part_number.clone(),
            inspection_type: p.key.inspection_type.clone(),
            current_tolerance: p.current_tolerance,
            false_call_count: p.false_calls_before,
            true_defect_count: p.defects_total,
            optimised_tolerance: p.final_tolerance,
            new_false_call_count: p.false_calls_after,
            new_true_defect_count: p.defects_flagged_after,
            guard_applied: p.guard.applied,
        })
        .collect();
    let before: usize = rows.iter().map(|r| r.false_call_count).sum();
    let after: usize = rows.iter().map(|r| r.new_false_call_count).sum();
    AggregateReport {
        parts: rows.len(),
        total_false_calls_before: before,
        total_false_calls_after: after,
        reduction_fraction: if before == 0 {
            0.0
        } else {
            before.saturating_sub(after) as f64 / before as f64
        },
        defects_total: rows.iter().map(|r| r.true_defect_count).sum(),
        defects_flagged: rows.iter().map(|r| r.new_true_defect_count).sum(),
        guard_activations: rows.iter().filter(|r| r.guard_applied).count(),
        rows,
    }
}

/// Fixed-width text table plus a totals line, stable for diffing.
pub fn render_table(report: &AggregateReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<10} {:<12} {:<12} {:>10} {:>8} {:>8} {:>10} {:>8} {:>8} {:>5}",
        "model", "part", "inspection", "cur_tol", "fc", "defects", "opt_tol", "new_fc", "new_def", "guard"
    );
    for r in &report.rows {
        let _ = writeln!(
            out,
            "{:<10} {:<12} {:<12} {:>10.4} {:>8} {:>8} {:>10.4} {:>8} {:>8} {:>5}",
            r.model,
            r.part_number,
            r.inspection_type,
            r.current_tolerance,
            r.false_call_count,
            r.true_defect_count,
            r.optimised_tolerance,
            r.new_false_call_count,
            r.new_true_defect_count,
            if r.guard_applied { "yes" } else { "no" }
        );
    }
    let _ = writeln!(
        out,
        "parts={} false_calls {} -> {} (reduction {:.2}%) defects flagged {}/{} guard_activations={}",
        report.parts,
        report.total_false_calls_before,
        report.total_false_calls_after,
        report.reduction_fraction * 100.0,
        report.defects_flagged,
        report.defects_total,
        report.guard_activations
    );
    out
}
