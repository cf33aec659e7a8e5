//! Upload a dataset, start a run, approve one proposal, reject another and
//! export the approved tolerances, all through the HTTP router in-process.
//!
//! Run with `cargo run -p aoitol-service --example service_roundtrip`.

use std::sync::Arc;

use aoitol_core::ingest::to_canonical_string;
use aoitol_core::simulate::{generate_synthetic, SyntheticSpec};
use aoitol_service::{router, Store};
use axum::body::Body;
use axum::http::Request;
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

async fn call(app: &Router, method: &str, uri: &str, body: String) -> (u16, String) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(Body::from(body))
        .expect("valid request");
    let resp = app.clone().oneshot(req).await.expect("router is infallible");
    let status = resp.status().as_u16();
    let bytes = resp.into_body().collect().await.expect("body").to_bytes();
    (status, String::from_utf8_lossy(&bytes).into_owned())
}

#[tokio::main]
async fn main() {
    let app = router(Arc::new(Store::in_memory()));
    let data = generate_synthetic(&SyntheticSpec {
        part_count: 6,
        ..SyntheticSpec::default()
    })
    .expect("feasible spec");
    let csv = to_canonical_string(data.values());

    let (status, body) = call(&app, "POST", "/datasets", csv.clone()).await;
    let version: Value = serde_json::from_str(&body).expect("json");
    println!("POST /datasets -> {status} version {}", version["version_id"]);
    let (status, _) = call(&app, "POST", "/datasets", csv).await;
    println!("POST /datasets again -> {status}");

    let run_req = json!({"dataset_version": version["version_id"], "percentile": 80}).to_string();
    let (status, body) = call(&app, "POST", "/runs", run_req).await;
    let run_id = serde_json::from_str::<Value>(&body).expect("json")["run_id"]
        .as_str()
        .expect("id")
        .to_owned();
    println!("POST /runs -> {status} {run_id}");

    let (_, body) = call(&app, "GET", &format!("/runs/{run_id}"), String::new()).await;
    let run: Value = serde_json::from_str(&body).expect("json");
    println!("overall holdout recall {}", run["validation"]["overall"]["recall"]);
    let proposals = run["proposals"].as_array().expect("proposals");

    for (i, decision) in [(0, "approved"), (1, "rejected"), (0, "approved")] {
        let id = proposals[i]["proposal_id"].as_str().expect("id");
        let req = json!({"decision": decision, "decided_by": "qe-lead"}).to_string();
        let (status, _) = call(&app, "POST", &format!("/proposals/{id}/decision"), req).await;
        println!("{decision} {id} -> {status}");
    }

    let (_, body) = call(
        &app,
        "GET",
        &format!(
            "/export/tolerances?version={}",
            version["version_id"].as_str().expect("id")
        ),
        String::new(),
    )
    .await;
    print!("{body}");
}
