//! Append-only persistence for datasets, runs and proposal decisions.
//!
//! State lives in memory and every change is first appended as one JSON
//! line to the event log. Opening a store replays the log, so the file is
//! the single source of truth. Nothing is updated in place.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::{Arc, Mutex, MutexGuard};

use aoitol_core::ingest::{ingest, ColumnMapping, PartDataset, PartKey, RejectReason};
use aoitol_core::optimizer::{optimize_all, SafetyMargin, ToleranceProposal};
use aoitol_core::quantile::Percentile;
use aoitol_core::validation::{run_validation_protocol, PartError, ProtocolConfig, SplitPolicy, ValidationReport};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("unknown dataset version {0}")]
    UnknownVersion(String),
    #[error("unknown proposal {0}")]
    UnknownProposal(String),
    #[error("proposal {0} already has a decision")]
    AlreadyDecided(String),
    #[error("invalid parameters: {0}")]
    InvalidParameters(String),
    #[error("event log: {0}")]
    Log(#[from] std::io::Error),
    #[error("corrupt event log line {line}: {source}")]
    Corrupt { line: usize, source: serde_json::Error },
}

/// Content-addressed identity of an uploaded dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetVersion {
    pub version_id: String,
    pub created_at: DateTime<Utc>,
    pub source: String,
    pub rows_read: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub quarantined: usize,
    pub parts: usize,
    pub rejects_by_reason: BTreeMap<RejectReason, usize>,
}

/// SHA-256 of the uploaded bytes, hex encoded.
pub fn version_id(body: &[u8]) -> String {
    hex::encode(Sha256::digest(body))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunParams {
    pub dataset_version: String,
    pub percentile: Percentile,
    pub margin: SafetyMargin,
    pub split_policy: SplitPolicy,
    pub top_k: usize,
    pub train_ratio: f64,
}

impl RunParams {
    /// Default margin, split policy, top-k and train ratio.
    pub fn new(dataset_version: impl Into<String>, percentile: Percentile) -> Self {
        Self {
            dataset_version: dataset_version.into(),
            percentile,
            margin: SafetyMargin::default(),
            split_policy: SplitPolicy::default(),
            top_k: aoitol_core::validation::DEFAULT_TOP_K,
            train_ratio: aoitol_core::validation::DEFAULT_TRAIN_RATIO,
        }
    }

    fn run_id(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("params serialise");
        let digest = hex::encode(Sha256::digest(&canonical));
        format!("run-{}", &digest[..16])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalEntry {
    pub proposal_id: String,
    pub proposal: ToleranceProposal,
}

/// Everything a run produced. Contains no wall-clock data, so equal
/// inputs serialise to equal bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub run_id: String,
    pub params: RunParams,
    pub proposals: Vec<ProposalEntry>,
    pub optimize_errors: Vec<PartError>,
    pub validation: Option<ValidationReport>,
    pub validation_error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Approved,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalDecision {
    pub proposal_id: String,
    pub decision: Decision,
    pub decided_by: String,
    pub decided_at: DateTime<Utc>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum Event {
    DatasetStored { version: DatasetVersion, body: String },
    RunStored { result: RunResult },
    DecisionRecorded { decision: ProposalDecision },
}

pub struct StoredDataset {
    pub version: DatasetVersion,
    pub datasets: BTreeMap<PartKey, PartDataset>,
}

#[derive(Default)]
struct State {
    datasets: BTreeMap<String, Arc<StoredDataset>>,
    runs: BTreeMap<String, Arc<RunResult>>,
    /// proposal id -> (run id, index into the run's proposals)
    proposals: BTreeMap<String, (String, usize)>,
    decisions: BTreeMap<String, ProposalDecision>,
    events: usize,
}

struct Inner {
    state: State,
    log: Option<File>,
}

pub struct Store {
    inner: Mutex<Inner>,
}

fn parse_dataset(body: &str) -> Result<(BTreeMap<PartKey, PartDataset>, Stats), StoreError> {
    let outcome = ingest(body.as_bytes(), &ColumnMapping::default()).map_err(|e| StoreError::Schema(e.to_string()))?;
    let stats = Stats {
        rows_read: outcome.rows_read,
        accepted: outcome.accepted(),
        rejected: outcome.rejected,
        quarantined: outcome.quarantined,
        rejects_by_reason: outcome.log.by_reason(),
    };
    Ok((outcome.datasets, stats))
}

struct Stats {
    rows_read: usize,
    accepted: usize,
    rejected: usize,
    quarantined: usize,
    rejects_by_reason: BTreeMap<RejectReason, usize>,
}

impl State {
    fn apply(&mut self, event: Event) -> Result<(), StoreError> {
        match event {
            Event::DatasetStored { version, body } => {
                let (datasets, _) = parse_dataset(&body)?;
                let id = version.version_id.clone();
                self.datasets.insert(id, Arc::new(StoredDataset { version, datasets }));
            }
            Event::RunStored { result } => {
                for (idx, entry) in result.proposals.iter().enumerate() {
                    self.proposals
                        .insert(entry.proposal_id.clone(), (result.run_id.clone(), idx));
                }
                self.runs.insert(result.run_id.clone(), Arc::new(result));
            }
            Event::DecisionRecorded { decision } => {
                self.decisions.insert(decision.proposal_id.clone(), decision);
            }
        }
        self.events += 1;
        Ok(())
    }
}

impl Inner {
    fn commit(&mut self, event: Event) -> Result<(), StoreError> {
        if let Some(log) = self.log.as_mut() {
            let mut line = serde_json::to_vec(&event).expect("events serialise");
            line.push(b'\n');
            log.write_all(&line)?;
            log.flush()?;
        }
        self.state.apply(event)
    }
}

impl Store {
    pub fn in_memory() -> Self {
        Self {
            inner: Mutex::new(Inner {
                state: State::default(),
                log: None,
            }),
        }
    }

    /// Opens (or creates) a store backed by the event log at `path`,
    /// replaying every recorded event.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = path.as_ref();
        let mut state = State::default();
        if path.exists() {
            let reader = BufReader::new(File::open(path)?);
            for (idx, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let event: Event =
                    serde_json::from_str(&line).map_err(|source| StoreError::Corrupt { line: idx + 1, source })?;
                state.apply(event)?;
            }
        }
        let log = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            inner: Mutex::new(Inner { state, log: Some(log) }),
        })
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
    }

    pub fn event_count(&self) -> usize {
        self.lock().state.events
    }

    /// Stores an upload. Returns the version and whether it was new.
    pub fn put_dataset(&self, body: String, source: &str) -> Result<(DatasetVersion, bool), StoreError> {
        let id = version_id(body.as_bytes());
        if let Some(existing) = self.dataset(&id) {
            return Ok((existing.version.clone(), false));
        }
        let (datasets, stats) = parse_dataset(&body)?;
        let version = DatasetVersion {
            version_id: id.clone(),
            created_at: Utc::now(),
            source: source.to_owned(),
            rows_read: stats.rows_read,
            accepted: stats.accepted,
            rejected: stats.rejected,
            quarantined: stats.quarantined,
            parts: datasets.len(),
            rejects_by_reason: stats.rejects_by_reason,
        };
        let mut inner = self.lock();
        if let Some(existing) = inner.state.datasets.get(&id) {
            return Ok((existing.version.clone(), false));
        }
        inner.commit(Event::DatasetStored {
            version: version.clone(),
            body,
        })?;
        Ok((version, true))
    }

    pub fn dataset(&self, version: &str) -> Option<Arc<StoredDataset>> {
        self.lock().state.datasets.get(version).cloned()
    }

    pub fn require_dataset(&self, version: &str) -> Result<Arc<StoredDataset>, StoreError> {
        self.dataset(version)
            .ok_or_else(|| StoreError::UnknownVersion(version.to_owned()))
    }

    /// Computes and records a run, or returns the existing one for identical
    /// parameters. The boolean is true when the run is new.
    pub fn put_run(&self, params: RunParams) -> Result<(Arc<RunResult>, bool), StoreError> {
        validate_run_params(&params)?;
        let stored = self.require_dataset(&params.dataset_version)?;
        let run_id = params.run_id();
        if let Some(existing) = self.run(&run_id) {
            return Ok((existing, false));
        }
        let result = compute_run(run_id.clone(), params, &stored.datasets);

        let mut inner = self.lock();
        if let Some(existing) = inner.state.runs.get(&run_id) {
            return Ok((existing.clone(), false));
        }
        inner.commit(Event::RunStored { result })?;
        Ok((inner.state.runs[&run_id].clone(), true))
    }

    pub fn run(&self, run_id: &str) -> Option<Arc<RunResult>> {
        self.lock().state.runs.get(run_id).cloned()
    }

    pub fn decide(
        &self,
        proposal_id: &str,
        decision: Decision,
        decided_by: &str,
        note: Option<String>,
        decided_at: DateTime<Utc>,
    ) -> Result<ProposalDecision, StoreError> {
        if decided_by.trim().is_empty() {
            return Err(StoreError::InvalidParameters("decided_by must be non-empty".into()));
        }
        let mut inner = self.lock();
        if !inner.state.proposals.contains_key(proposal_id) {
            return Err(StoreError::UnknownProposal(proposal_id.to_owned()));
        }
        if inner.state.decisions.contains_key(proposal_id) {
            return Err(StoreError::AlreadyDecided(proposal_id.to_owned()));
        }
        let record = ProposalDecision {
            proposal_id: proposal_id.to_owned(),
            decision,
            decided_by: decided_by.to_owned(),
            decided_at,
            note,
        };
        inner.commit(Event::DecisionRecorded {
            decision: record.clone(),
        })?;
        Ok(record)
    }

    pub fn decision(&self, proposal_id: &str) -> Option<ProposalDecision> {
        self.lock().state.decisions.get(proposal_id).cloned()
    }

    /// Approved proposals for runs on `version`, as
    /// `part_number,inspection_type,final_tolerance` rows sorted by key.
    pub fn export_tolerances(&self, version: &str) -> Result<String, StoreError> {
        let inner = self.lock();
        let state = &inner.state;
        if !state.datasets.contains_key(version) {
            return Err(StoreError::UnknownVersion(version.to_owned()));
        }
        let mut rows: Vec<(&PartKey, &str, f64)> = Vec::new();
        for (proposal_id, decision) in &state.decisions {
            if decision.decision != Decision::Approved {
                continue;
            }
            let (run_id, idx) = &state.proposals[proposal_id];
            let run = &state.runs[run_id];
            if run.params.dataset_version != version {
                continue;
            }
            let p = &run.proposals[*idx].proposal;
            rows.push((&p.key, proposal_id, p.final_tolerance));
        }
        rows.sort_by(|a, b| a.0.cmp(b.0).then(a.1.cmp(b.1)));
        let mut out = String::from("part_number,inspection_type,final_tolerance\n");
        for (key, _, tol) in rows {
            out.push_str(&format!("{},{},{}\n", key.part_number, key.inspection_type, tol));
        }
        Ok(out)
    }
}

fn validate_run_params(params: &RunParams) -> Result<(), StoreError> {
    params
        .margin
        .validate()
        .map_err(|e| StoreError::InvalidParameters(e.to_string()))?;
    if !(params.train_ratio > 0.0 && params.train_ratio < 1.0) {
        return Err(StoreError::InvalidParameters(format!(
            "train_ratio {} must lie in (0, 1)",
            params.train_ratio
        )));
    }
    if params.top_k == 0 {
        return Err(StoreError::InvalidParameters("top_k must be at least 1".into()));
    }
    Ok(())
}

fn compute_run(run_id: String, params: RunParams, datasets: &BTreeMap<PartKey, PartDataset>) -> RunResult {
    let batch = optimize_all(datasets, params.percentile, params.margin);
    let proposals = batch
        .proposals
        .into_iter()
        .enumerate()
        .map(|(i, proposal)| ProposalEntry {
            proposal_id: format!("{run_id}-p{i:05}"),
            proposal,
        })
        .collect();
    let optimize_errors = batch
        .errors
        .into_iter()
        .map(|(key, e)| PartError {
            key,
            error: e.to_string(),
        })
        .collect();
    let config = ProtocolConfig {
        percentile: params.percentile,
        margin: params.margin,
        top_k: params.top_k,
        train_ratio: params.train_ratio,
        policy: params.split_policy,
    };
    let (validation, validation_error) = match run_validation_protocol(datasets, &config) {
        Ok(report) => (Some(report), None),
        Err(e) => (None, Some(e.to_string())),
    };
    RunResult {
        run_id,
        params,
        proposals,
        optimize_errors,
        validation,
        validation_error,
    }
}
