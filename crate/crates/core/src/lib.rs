//! Data-driven tolerance optimisation for Automated Optical Inspection.
//!
//! Per part and inspection type, the engine collects the measurements a
//! human judged to be false calls, places a candidate tolerance at a chosen
//! percentile of them, and then applies a defect guard so every confirmed
//! defect is still flagged. A holdout protocol checks the result against
//! defects the optimiser never saw, and a sweep simulates many percentiles
//! without touching the data.
//!
//! Modules follow the pipeline:
//!
//! - [`ingest`]: canonical CSV parsing, reject log, grouping into [`PartDataset`]s
//! - [`quantile`]: sort, percentile rank, linear interpolation, mean
//! - [`optimizer`]: flagging rule, defect guard, [`ToleranceProposal`]s
//! - [`validation`]: top-part selection, 70/30 split, holdout recall
//! - [`simulate`]: percentile sweeps, reports, histograms, synthetic data
//!
//! Runnable walkthroughs live in this crate's `examples/` directory.

pub mod ingest;
pub mod optimizer;
pub mod quantile;
pub mod simulate;
pub mod validation;

pub use ingest::{ingest, ColumnMapping, Disposition, InspectionRecord, PartDataset, PartKey, RejectLog, RejectReason};
pub use optimizer::{defect_guard, flag, optimize_all, optimize_part, GuardOutcome, SafetyMargin, ToleranceProposal};
pub use quantile::{mean, percentile_rank, percentile_value, sort_ascending, Percentile, SortedValues};
pub use simulate::{generate_synthetic, sweep, SweepPoint, SyntheticSpec};
pub use validation::{run_validation_protocol, ProtocolConfig, SplitPolicy, ValidationReport, ValidationRow};
