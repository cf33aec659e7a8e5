//! What-if simulation over percentile choices, reporting and synthetic data.
//!
//! Nothing here mutates a dataset: every function borrows its inputs and
//! returns fresh values, so a sweep can be run as often as needed before
//! anything is pushed to a machine.

mod histogram;
mod report;
mod sweep;
mod synthetic;

pub use histogram::{histogram, HistogramData, HistogramMarkers, DEFAULT_BIN_COUNT};
pub use report::{aggregate_report, render_table, AggregateReport, ReportRow};
pub use sweep::{default_grid, parse_percentile_list, sweep, SweepAnnotation, SweepOutcome, SweepPoint};
pub use synthetic::{
    generate_synthetic, CountRange, DefectDistribution, FalseCallDistribution, SyntheticSpec, ValueRange,
};

use thiserror::Error;

use crate::quantile::QuantileError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimulateError {
    #[error("percentile list is empty")]
    EmptyPercentiles,
    #[error("invalid percentile list `{0}`")]
    BadPercentileList(String),
    #[error(transparent)]
    Quantile(#[from] QuantileError),
    #[error("bin count must be at least 1")]
    ZeroBins,
    #[error("infeasible synthetic spec: {0}")]
    Spec(String),
}
