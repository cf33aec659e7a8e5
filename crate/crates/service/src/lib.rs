//! HTTP facade over the tolerance optimiser.
//!
//! Datasets are content-addressed by the SHA-256 of the uploaded bytes,
//! runs by a hash of their parameters, and all state changes go through an
//! append-only event log (see [`store`]). Endpoints:
//!
//! | method | path | purpose |
//! |---|---|---|
//! | POST | `/datasets` | upload canonical CSV, returns a `DatasetVersion` |
//! | GET | `/datasets/{version}` | version metadata |
//! | GET | `/datasets/{version}/histogram` | false-call histogram with tolerance markers |
//! | POST | `/runs` | optimise + validate a stored version |
//! | GET | `/runs/{id}` | proposals and validation report |
//! | POST | `/sweeps` | percentile what-if sweep |
//! | POST | `/proposals/{id}/decision` | approve or reject a proposal once |
//! | GET | `/export/tolerances?version=` | approved tolerances as CSV |

pub mod api;
pub mod store;

use std::sync::Arc;

pub use api::router;
pub use store::{DatasetVersion, Decision, ProposalDecision, RunParams, RunResult, Store, StoreError};

/// Serves the API on an already bound listener until the task is dropped.
pub async fn serve(listener: tokio::net::TcpListener, store: Arc<Store>) -> std::io::Result<()> {
    axum::serve(listener, router(store)).await
}
