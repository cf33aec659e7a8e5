//! Parsing and grouping of raw AOI inspection exports.
//!
//! Input is UTF-8 comma-separated text with a header row. Every data row
//! either becomes an [`InspectionRecord`] or lands in the [`RejectLog`] with
//! exactly one reason. Accepted records are then grouped per [`PartKey`]
//! into [`PartDataset`]s; flagged rows that contradict the flagging rule and
//! keys with conflicting tolerances are quarantined rather than dropped
//! silently.

use std::collections::BTreeMap;
use std::fmt;
use std::io;

use chrono::{DateTime, NaiveDateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::optimizer::flag;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("input has no header row")]
    MissingHeader,
    #[error("header is missing required column `{0}`")]
    MissingColumn(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Human disposition of an inspection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Disposition {
    TrueDefect,
    FalseCall,
    NotReviewed,
}

impl Disposition {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::TrueDefect => "true_defect",
            Self::FalseCall => "false_call",
            Self::NotReviewed => "not_reviewed",
        }
    }

    fn parse(raw: &str) -> Option<Self> {
        match raw.to_ascii_lowercase().as_str() {
            "true_defect" => Some(Self::TrueDefect),
            "false_call" => Some(Self::FalseCall),
            "not_reviewed" => Some(Self::NotReviewed),
            _ => None,
        }
    }

    /// Whether a human actually judged the item.
    pub fn is_reviewed(self) -> bool {
        self != Self::NotReviewed
    }
}

/// Grouping key: tolerances are set per part and per inspection type.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PartKey {
    pub part_number: String,
    pub inspection_type: String,
}

impl PartKey {
    pub fn new(part_number: impl Into<String>, inspection_type: impl Into<String>) -> Self {
        Self {
            part_number: part_number.into(),
            inspection_type: inspection_type.into(),
        }
    }

    pub fn is_valid(&self) -> bool {
        !self.part_number.is_empty() && !self.inspection_type.is_empty()
    }
}

impl fmt::Display for PartKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.part_number, self.inspection_type)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InspectionRecord {
    pub model_id: String,
    pub key: PartKey,
    pub measured_value: f64,
    pub tolerance_at_inspection: f64,
    pub machine_flagged: bool,
    pub disposition: Disposition,
    pub timestamp: Option<DateTime<Utc>>,
}

impl InspectionRecord {
    /// Finite numerics and no human disposition on an unflagged item.
    pub fn is_consistent(&self) -> bool {
        self.measured_value.is_finite()
            && self.tolerance_at_inspection.is_finite()
            && (self.machine_flagged || !self.disposition.is_reviewed())
            && self.key.is_valid()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RejectReason {
    MissingField,
    NonNumeric,
    /// A non-numeric field (flag, disposition, timestamp) or the row shape
    /// does not follow the canonical format.
    Malformed,
    InconsistentFlag,
    ConflictingTolerance,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reject {
    /// 0-based data-row index (header excluded) for parse rejects; record
    /// index for grouping rejects unless remapped by [`ingest`].
    pub row: usize,
    pub reason: RejectReason,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectLog {
    pub entries: Vec<Reject>,
}

impl RejectLog {
    pub fn push(&mut self, row: usize, reason: RejectReason, detail: impl Into<String>) {
        self.entries.push(Reject {
            row,
            reason,
            detail: detail.into(),
        });
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn count(&self, reason: RejectReason) -> usize {
        self.entries.iter().filter(|r| r.reason == reason).count()
    }

    pub fn by_reason(&self) -> BTreeMap<RejectReason, usize> {
        let mut counts = BTreeMap::new();
        for r in &self.entries {
            *counts.entry(r.reason).or_insert(0) += 1;
        }
        counts
    }
}

/// Header names for the canonical columns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMapping {
    pub model: String,
    pub part_number: String,
    pub inspection_type: String,
    pub value: String,
    pub tolerance: String,
    pub machine_flagged: String,
    pub disposition: String,
    /// Optional; absent from the header means no timestamps.
    pub timestamp: String,
}

impl Default for ColumnMapping {
    fn default() -> Self {
        Self {
            model: "model".into(),
            part_number: "part_number".into(),
            inspection_type: "inspection_type".into(),
            value: "value".into(),
            tolerance: "tolerance".into(),
            machine_flagged: "machine_flagged".into(),
            disposition: "disposition".into(),
            timestamp: "timestamp".into(),
        }
    }
}

struct ColumnIndex {
    model: usize,
    part_number: usize,
    inspection_type: usize,
    value: usize,
    tolerance: usize,
    machine_flagged: usize,
    disposition: usize,
    timestamp: Option<usize>,
}

impl ColumnIndex {
    fn resolve(header: &csv::StringRecord, mapping: &ColumnMapping) -> Result<Self, IngestError> {
        let find = |name: &str| header.iter().position(|h| h == name);
        let require = |name: &str| find(name).ok_or_else(|| IngestError::MissingColumn(name.to_owned()));
        Ok(Self {
            model: require(&mapping.model)?,
            part_number: require(&mapping.part_number)?,
            inspection_type: require(&mapping.inspection_type)?,
            value: require(&mapping.value)?,
            tolerance: require(&mapping.tolerance)?,
            machine_flagged: require(&mapping.machine_flagged)?,
            disposition: require(&mapping.disposition)?,
            timestamp: find(&mapping.timestamp),
        })
    }
}

/// Output of [`parse_records`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParsedRecords {
    pub records: Vec<InspectionRecord>,
    /// Data-row index of each accepted record, parallel to `records`.
    pub source_rows: Vec<usize>,
    pub rejects: RejectLog,
    pub rows_read: usize,
}

fn parse_number(raw: &str) -> Option<f64> {
    raw.parse::<f64>().ok().filter(|v| v.is_finite())
}

fn parse_bool(raw: &str) -> Option<bool> {
    if raw.eq_ignore_ascii_case("true") {
        Some(true)
    } else if raw.eq_ignore_ascii_case("false") {
        Some(false)
    } else {
        None
    }
}

fn parse_timestamp(raw: &str) -> Option<DateTime<Utc>> {
    if let Ok(dt) = DateTime::parse_from_rfc3339(raw) {
        return Some(dt.with_timezone(&Utc));
    }
    NaiveDateTime::parse_from_str(raw, "%Y-%m-%dT%H:%M:%S%.f")
        .ok()
        .map(|naive| naive.and_utc())
}

pub fn format_timestamp(ts: &DateTime<Utc>) -> String {
    ts.to_rfc3339_opts(SecondsFormat::AutoSi, true)
}

fn parse_row(
    row: &csv::StringRecord,
    cols: &ColumnIndex,
    width: usize,
) -> Result<InspectionRecord, (RejectReason, String)> {
    if row.len() < width {
        return Err((
            RejectReason::MissingField,
            format!("row has {} fields, header has {width}", row.len()),
        ));
    }
    if row.len() > width {
        return Err((
            RejectReason::Malformed,
            format!("row has {} fields, header has {width}", row.len()),
        ));
    }
    let required = |idx: usize, name: &str| -> Result<&str, (RejectReason, String)> {
        let v = row.get(idx).unwrap_or("");
        if v.is_empty() {
            Err((RejectReason::MissingField, name.to_owned()))
        } else {
            Ok(v)
        }
    };
    let numeric = |idx: usize, name: &str| -> Result<f64, (RejectReason, String)> {
        let raw = required(idx, name)?;
        parse_number(raw).ok_or_else(|| (RejectReason::NonNumeric, format!("{name}: {raw:?}")))
    };

    let model_id = required(cols.model, "model")?.to_owned();
    let part_number = required(cols.part_number, "part_number")?.to_owned();
    let inspection_type = required(cols.inspection_type, "inspection_type")?.to_owned();
    let measured_value = numeric(cols.value, "value")?;
    let tolerance_at_inspection = numeric(cols.tolerance, "tolerance")?;
    let raw_flag = required(cols.machine_flagged, "machine_flagged")?;
    let machine_flagged =
        parse_bool(raw_flag).ok_or_else(|| (RejectReason::Malformed, format!("machine_flagged: {raw_flag:?}")))?;
    let raw_disp = required(cols.disposition, "disposition")?;
    let disposition =
        Disposition::parse(raw_disp).ok_or_else(|| (RejectReason::Malformed, format!("disposition: {raw_disp:?}")))?;
    let timestamp = match cols.timestamp.and_then(|idx| row.get(idx)).filter(|s| !s.is_empty()) {
        None => None,
        Some(raw) => {
            Some(parse_timestamp(raw).ok_or_else(|| (RejectReason::Malformed, format!("timestamp: {raw:?}")))?)
        }
    };
    if disposition.is_reviewed() && !machine_flagged {
        return Err((
            RejectReason::InconsistentFlag,
            format!("{} disposition on an unflagged row", disposition.as_str()),
        ));
    }
    Ok(InspectionRecord {
        model_id,
        key: PartKey {
            part_number,
            inspection_type,
        },
        measured_value,
        tolerance_at_inspection,
        machine_flagged,
        disposition,
        timestamp,
    })
}

/// Parses canonical delimited text into records plus a per-row reject log.
///
/// A missing header column is fatal; every other problem rejects only the
/// offending row (first failure wins). Accepted rows keep their input order.
pub fn parse_records<R: io::Read>(input: R, mapping: &ColumnMapping) -> Result<ParsedRecords, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let header = reader.headers()?.clone();
    if header.is_empty() || header.iter().all(str::is_empty) {
        return Err(IngestError::MissingHeader);
    }
    let cols = ColumnIndex::resolve(&header, mapping)?;

    let mut out = ParsedRecords::default();
    for (row_idx, row) in reader.records().enumerate() {
        let row = row?;
        out.rows_read += 1;
        match parse_row(&row, &cols, header.len()) {
            Ok(rec) => {
                out.records.push(rec);
                out.source_rows.push(row_idx);
            }
            Err((reason, detail)) => out.rejects.push(row_idx, reason, detail),
        }
    }
    Ok(out)
}

/// A defect observation; timestamps drive the chronological holdout split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DefectObservation {
    pub value: f64,
    pub timestamp: Option<DateTime<Utc>>,
}

impl DefectObservation {
    pub fn new(value: f64) -> Self {
        Self { value, timestamp: None }
    }
}

/// All dispositioned data for one (part, inspection type).
#[derive(Debug, Clone, PartialEq)]
pub struct PartDataset {
    pub key: PartKey,
    /// Distinct models the part appeared on, sorted. Metadata only.
    pub models: Vec<String>,
    pub current_tolerance: f64,
    pub false_call_values: Vec<f64>,
    pub defects: Vec<DefectObservation>,
    /// Flagged but never dispositioned; excluded from optimisation.
    pub not_reviewed_values: Vec<f64>,
    pub pass_count: usize,
    pub quarantined_count: usize,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DatasetInvariantError {
    #[error("part key has an empty component: {0}")]
    EmptyKey(PartKey),
    #[error("{key}: current tolerance {value} is not finite")]
    NonFiniteTolerance { key: PartKey, value: f64 },
    #[error("{key}: {kind} value {value} is not flagged under tolerance {tolerance}")]
    Unflagged {
        key: PartKey,
        kind: &'static str,
        value: f64,
        tolerance: f64,
    },
}

impl PartDataset {
    pub fn new(key: PartKey, current_tolerance: f64) -> Self {
        Self {
            key,
            models: Vec::new(),
            current_tolerance,
            false_call_values: Vec::new(),
            defects: Vec::new(),
            not_reviewed_values: Vec::new(),
            pass_count: 0,
            quarantined_count: 0,
        }
    }

    pub fn with_false_calls(mut self, values: impl IntoIterator<Item = f64>) -> Self {
        self.false_call_values.extend(values);
        self
    }

    pub fn with_defects(mut self, values: impl IntoIterator<Item = f64>) -> Self {
        self.defects.extend(values.into_iter().map(DefectObservation::new));
        self
    }

    pub fn with_model(mut self, model: impl Into<String>) -> Self {
        let model = model.into();
        if let Err(pos) = self.models.binary_search(&model) {
            self.models.insert(pos, model);
        }
        self
    }

    pub fn defect_values(&self) -> Vec<f64> {
        self.defects.iter().map(|d| d.value).collect()
    }

    pub fn defect_count(&self) -> usize {
        self.defects.len()
    }

    /// Checks the dataset invariants: valid key, finite tolerance, and every
    /// dispositioned value flagged under the current tolerance.
    pub fn check_invariants(&self) -> Result<(), DatasetInvariantError> {
        if !self.key.is_valid() {
            return Err(DatasetInvariantError::EmptyKey(self.key.clone()));
        }
        let tolerance = self.current_tolerance;
        if !tolerance.is_finite() {
            return Err(DatasetInvariantError::NonFiniteTolerance {
                key: self.key.clone(),
                value: tolerance,
            });
        }
        let groups: [(&'static str, Box<dyn Iterator<Item = f64> + '_>); 3] = [
            ("false-call", Box::new(self.false_call_values.iter().copied())),
            ("defect", Box::new(self.defects.iter().map(|d| d.value))),
            ("not-reviewed", Box::new(self.not_reviewed_values.iter().copied())),
        ];
        for (kind, values) in groups {
            for value in values {
                if !(value.is_finite() && flag(value, tolerance)) {
                    return Err(DatasetInvariantError::Unflagged {
                        key: self.key.clone(),
                        kind,
                        value,
                        tolerance,
                    });
                }
            }
        }
        Ok(())
    }
}

/// Groups records by [`PartKey`].
///
/// Reject entries here refer to positions in `records`. A key whose records
/// disagree on tolerance is dropped and every record of it quarantined as
/// `ConflictingTolerance`, except records that are individually
/// `InconsistentFlag`, which keep that reason.
pub fn build_part_datasets(records: &[InspectionRecord]) -> (BTreeMap<PartKey, PartDataset>, RejectLog) {
    let mut groups: BTreeMap<&PartKey, Vec<usize>> = BTreeMap::new();
    for (idx, rec) in records.iter().enumerate() {
        groups.entry(&rec.key).or_default().push(idx);
    }

    let mut quarantined: Vec<(usize, RejectReason, String)> = Vec::new();
    let mut datasets = BTreeMap::new();
    for (key, indices) in groups {
        let first_tol = records[indices[0]].tolerance_at_inspection;
        let conflicting = indices
            .iter()
            .any(|&i| records[i].tolerance_at_inspection.to_bits() != first_tol.to_bits());

        let mut dataset = PartDataset::new(key.clone(), first_tol);
        for &idx in &indices {
            let rec = &records[idx];
            if !rec.is_consistent() || (rec.machine_flagged && !flag(rec.measured_value, rec.tolerance_at_inspection)) {
                quarantined.push((
                    idx,
                    RejectReason::InconsistentFlag,
                    format!(
                        "flagged={} value {} tolerance {}",
                        rec.machine_flagged, rec.measured_value, rec.tolerance_at_inspection
                    ),
                ));
                dataset.quarantined_count += 1;
                continue;
            }
            if conflicting {
                quarantined.push((
                    idx,
                    RejectReason::ConflictingTolerance,
                    format!("{key}: tolerance {} vs {first_tol}", rec.tolerance_at_inspection),
                ));
                continue;
            }
            if let Err(pos) = dataset.models.binary_search(&rec.model_id) {
                dataset.models.insert(pos, rec.model_id.clone());
            }
            match (rec.machine_flagged, rec.disposition) {
                (true, Disposition::FalseCall) => dataset.false_call_values.push(rec.measured_value),
                (true, Disposition::TrueDefect) => dataset.defects.push(DefectObservation {
                    value: rec.measured_value,
                    timestamp: rec.timestamp,
                }),
                (true, Disposition::NotReviewed) => dataset.not_reviewed_values.push(rec.measured_value),
                (false, _) => dataset.pass_count += 1,
            }
        }
        if !conflicting {
            datasets.insert(key.clone(), dataset);
        }
    }

    quarantined.sort_by_key(|(idx, _, _)| *idx);
    let mut log = RejectLog::default();
    for (idx, reason, detail) in quarantined {
        log.push(idx, reason, detail);
    }
    (datasets, log)
}

/// Parse plus grouping, with every log entry expressed as a data-row index.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IngestOutcome {
    pub datasets: BTreeMap<PartKey, PartDataset>,
    /// Parse rejects and grouping quarantines, sorted by row.
    pub log: RejectLog,
    pub rows_read: usize,
    pub rejected: usize,
    pub quarantined: usize,
}

impl IngestOutcome {
    pub fn accepted(&self) -> usize {
        self.rows_read - self.rejected - self.quarantined
    }
}

pub fn ingest<R: io::Read>(input: R, mapping: &ColumnMapping) -> Result<IngestOutcome, IngestError> {
    let parsed = parse_records(input, mapping)?;
    let (datasets, quarantine) = build_part_datasets(&parsed.records);
    let rejected = parsed.rejects.len();
    let quarantined = quarantine.len();
    let mut log = parsed.rejects;
    log.entries.extend(quarantine.entries.into_iter().map(|mut r| {
        r.row = parsed.source_rows[r.row];
        r
    }));
    log.entries.sort_by_key(|r| r.row);
    Ok(IngestOutcome {
        datasets,
        log,
        rows_read: parsed.rows_read,
        rejected,
        quarantined,
    })
}

pub const CANONICAL_HEADER: [&str; 8] = [
    "model",
    "part_number",
    "inspection_type",
    "value",
    "tolerance",
    "machine_flagged",
    "disposition",
    "timestamp",
];

/// Writes datasets back out in the canonical input format.
///
/// Re-parsing the output with the default mapping reproduces the datasets
/// exactly. Pass rows are written at the tolerance itself (unflagged) and
/// quarantined rows as flagged false calls at the tolerance, so both are
/// reconstructed as counts.
pub fn write_canonical<'a, W, I>(datasets: I, out: W) -> Result<(), IngestError>
where
    W: io::Write,
    I: IntoIterator<Item = &'a PartDataset>,
{
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CANONICAL_HEADER)?;
    for ds in datasets {
        let tol = ds.current_tolerance.to_string();
        let mut model_cycle = ds.models.iter().cycle();
        let fallback = "unknown".to_owned();
        let mut next_model = || model_cycle.next().unwrap_or(&fallback).clone();
        let mut row = |model: String, value: f64, flagged: bool, disp: Disposition, ts: String| {
            w.write_record([
                model.as_str(),
                &ds.key.part_number,
                &ds.key.inspection_type,
                &value.to_string(),
                &tol,
                if flagged { "true" } else { "false" },
                disp.as_str(),
                &ts,
            ])
        };
        for &v in &ds.false_call_values {
            row(next_model(), v, true, Disposition::FalseCall, String::new())?;
        }
        for d in &ds.defects {
            let ts = d.timestamp.as_ref().map(format_timestamp).unwrap_or_default();
            row(next_model(), d.value, true, Disposition::TrueDefect, ts)?;
        }
        for &v in &ds.not_reviewed_values {
            row(next_model(), v, true, Disposition::NotReviewed, String::new())?;
        }
        for _ in 0..ds.pass_count {
            row(
                next_model(),
                ds.current_tolerance,
                false,
                Disposition::NotReviewed,
                String::new(),
            )?;
        }
        let quarantine_model = ds.models.first().cloned().unwrap_or_else(|| fallback.clone());
        for _ in 0..ds.quarantined_count {
            row(
                quarantine_model.clone(),
                ds.current_tolerance,
                true,
                Disposition::FalseCall,
                String::new(),
            )?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn to_canonical_string<'a, I>(datasets: I) -> String
where
    I: IntoIterator<Item = &'a PartDataset>,
{
    let mut buf = Vec::new();
    write_canonical(datasets, &mut buf).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("canonical output is UTF-8")
}
