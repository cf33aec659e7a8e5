use std::sync::Arc;

use aoitol_core::ingest::PartKey;
use aoitol_core::optimizer::{optimize_part, SafetyMargin};
use aoitol_core::quantile::Percentile;
use aoitol_core::simulate::{histogram, sweep, HistogramMarkers, SweepOutcome, DEFAULT_BIN_COUNT};
use aoitol_core::validation::{SplitPolicy, DEFAULT_TOP_K, DEFAULT_TRAIN_RATIO};
use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::Utc;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::store::{Decision, RunParams, Store, StoreError};

pub struct ApiError {
    status: StatusCode,
    body: serde_json::Value,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            body: json!({ "error": message.into() }),
        }
    }

    fn unprocessable(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, message)
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let status = match &e {
            StoreError::Schema(_) => StatusCode::BAD_REQUEST,
            StoreError::UnknownVersion(_) | StoreError::UnknownProposal(_) => StatusCode::NOT_FOUND,
            StoreError::AlreadyDecided(_) => StatusCode::CONFLICT,
            StoreError::InvalidParameters(_) => StatusCode::UNPROCESSABLE_ENTITY,
            StoreError::Log(_) | StoreError::Corrupt { .. } => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn percentile(p: f64) -> ApiResult<Percentile> {
    Percentile::new(p).map_err(|e| ApiError::unprocessable(e.to_string()))
}

fn margin_or_default(margin: Option<SafetyMargin>) -> ApiResult<SafetyMargin> {
    let margin = margin.unwrap_or_default();
    margin.validate().map_err(|e| ApiError::unprocessable(e.to_string()))?;
    Ok(margin)
}

fn created_or_ok(created: bool) -> StatusCode {
    if created {
        StatusCode::CREATED
    } else {
        StatusCode::OK
    }
}

pub fn router(store: Arc<Store>) -> Router {
    Router::new()
        .route("/health", get(|| async { "ok" }))
        .route("/datasets", post(post_dataset))
        .route("/datasets/{version}", get(get_dataset))
        .route("/datasets/{version}/histogram", get(get_histogram))
        .route("/runs", post(post_run))
        .route("/runs/{id}", get(get_run))
        .route("/sweeps", post(post_sweep))
        .route("/proposals/{id}/decision", post(post_decision).get(get_decision))
        .route("/export/tolerances", get(export_tolerances))
        .with_state(store)
}

async fn post_dataset(State(store): State<Arc<Store>>, headers: HeaderMap, body: Bytes) -> ApiResult<Response> {
    let text =
        String::from_utf8(body.to_vec()).map_err(|_| ApiError::new(StatusCode::BAD_REQUEST, "body is not UTF-8"))?;
    let source = headers
        .get("x-source")
        .and_then(|v| v.to_str().ok())
        .unwrap_or("upload")
        .to_owned();
    let (version, created) = store.put_dataset(text, &source)?;
    Ok((created_or_ok(created), Json(version)).into_response())
}

async fn get_dataset(State(store): State<Arc<Store>>, Path(version): Path<String>) -> ApiResult<Response> {
    let stored = store.require_dataset(&version)?;
    Ok(Json(stored.version.clone()).into_response())
}

#[derive(Debug, Deserialize)]
struct HistogramQuery {
    part_number: String,
    inspection_type: String,
    percentile: Option<f64>,
    bins: Option<usize>,
}

async fn get_histogram(
    State(store): State<Arc<Store>>,
    Path(version): Path<String>,
    Query(q): Query<HistogramQuery>,
) -> ApiResult<Response> {
    let stored = store.require_dataset(&version)?;
    let key = PartKey::new(q.part_number, q.inspection_type);
    let part = stored
        .datasets
        .get(&key)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown part {key}")))?;
    let p = percentile(q.percentile.unwrap_or(80.0))?;
    let proposal =
        optimize_part(part, p, SafetyMargin::default()).map_err(|e| ApiError::unprocessable(e.to_string()))?;
    let markers = HistogramMarkers {
        current_tolerance: proposal.current_tolerance,
        optimised_tolerance: proposal.final_tolerance,
    };
    let hist = histogram(&part.false_call_values, q.bins.unwrap_or(DEFAULT_BIN_COUNT), markers)
        .map_err(|e| ApiError::unprocessable(e.to_string()))?;
    Ok(Json(json!({ "histogram": hist, "proposal": proposal })).into_response())
}

#[derive(Debug, Deserialize)]
struct RunRequest {
    dataset_version: String,
    percentile: f64,
    margin: Option<SafetyMargin>,
    split_policy: Option<SplitPolicy>,
    top_k: Option<usize>,
    train_ratio: Option<f64>,
}

#[derive(Debug, Serialize)]
struct RunCreated {
    run_id: String,
}

async fn post_run(State(store): State<Arc<Store>>, Json(req): Json<RunRequest>) -> ApiResult<Response> {
    let params = RunParams {
        dataset_version: req.dataset_version,
        percentile: percentile(req.percentile)?,
        margin: margin_or_default(req.margin)?,
        split_policy: req.split_policy.unwrap_or_default(),
        top_k: req.top_k.unwrap_or(DEFAULT_TOP_K),
        train_ratio: req.train_ratio.unwrap_or(DEFAULT_TRAIN_RATIO),
    };
    let store_for_run = store.clone();
    let (result, created) = tokio::task::spawn_blocking(move || store_for_run.put_run(params))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    tracing::info!(run_id = %result.run_id, created, "run");
    Ok((
        created_or_ok(created),
        Json(RunCreated {
            run_id: result.run_id.clone(),
        }),
    )
        .into_response())
}

async fn get_run(State(store): State<Arc<Store>>, Path(id): Path<String>) -> ApiResult<Response> {
    let run = store
        .run(&id)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown run {id}")))?;
    let body = serde_json::to_vec(run.as_ref()).expect("run results serialise");
    Ok(([(header::CONTENT_TYPE, "application/json")], body).into_response())
}

#[derive(Debug, Deserialize)]
struct SweepRequest {
    dataset_version: String,
    percentiles: Vec<f64>,
    margin: Option<SafetyMargin>,
}

async fn post_sweep(State(store): State<Arc<Store>>, Json(req): Json<SweepRequest>) -> ApiResult<Json<SweepOutcome>> {
    let stored = store.require_dataset(&req.dataset_version)?;
    if req.percentiles.is_empty() {
        return Err(ApiError::unprocessable("percentile list is empty"));
    }
    let ps = req
        .percentiles
        .into_iter()
        .map(percentile)
        .collect::<ApiResult<Vec<_>>>()?;
    let margin = margin_or_default(req.margin)?;
    let outcome = tokio::task::spawn_blocking(move || sweep(&stored.datasets, &ps, margin))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map_err(|e| ApiError::unprocessable(e.to_string()))?;
    Ok(Json(outcome))
}

#[derive(Debug, Deserialize)]
struct DecisionRequest {
    decision: Decision,
    decided_by: String,
    note: Option<String>,
}

async fn post_decision(
    State(store): State<Arc<Store>>,
    Path(id): Path<String>,
    Json(req): Json<DecisionRequest>,
) -> ApiResult<Response> {
    let recorded = store.decide(&id, req.decision, &req.decided_by, req.note, Utc::now())?;
    Ok((StatusCode::CREATED, Json(recorded)).into_response())
}

async fn get_decision(State(store): State<Arc<Store>>, Path(id): Path<String>) -> ApiResult<Response> {
    let decision = store
        .decision(&id)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("no decision for {id}")))?;
    Ok(Json(decision).into_response())
}

#[derive(Debug, Deserialize)]
struct ExportQuery {
    version: String,
}

async fn export_tolerances(State(store): State<Arc<Store>>, Query(q): Query<ExportQuery>) -> ApiResult<Response> {
    let csv = store.export_tolerances(&q.version)?;
    Ok(([(header::CONTENT_TYPE, "text/csv")], csv).into_response())
}
