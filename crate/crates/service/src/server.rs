//! HTTP interface over the job service.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use ponzilens_core::features::parse_column_order;
use ponzilens_core::report::{reorder_feature_level, report_schema};
use serde::Deserialize;
use serde_json::json;
use tower_http::cors::{AllowOrigin, CorsLayer};

use crate::jobs::{AnalysisRequest, JobId, Lookup, Service};

type Shared = Arc<Service>;

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": message.into() }))).into_response()
}

fn json_text(status: StatusCode, body: String) -> Response {
    (status, [(header::CONTENT_TYPE, HeaderValue::from_static("application/json"))], body).into_response()
}

fn job_id(raw: &str) -> Result<JobId, Box<Response>> {
    raw.parse().map_err(|_| Box::new(error(StatusCode::NOT_FOUND, format!("unknown analysis {raw:?}"))))
}

fn lookup_error(id: JobId, l: Lookup) -> Response {
    match l {
        Lookup::Unknown => error(StatusCode::NOT_FOUND, format!("unknown analysis {id}")),
        Lookup::NotReady(status) => {
            (StatusCode::CONFLICT, Json(json!({ "error": format!("analysis {id} has no report"), "status": status })))
                .into_response()
        }
    }
}

async fn create(State(svc): State<Shared>, body: Bytes) -> Response {
    let req: AnalysisRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("malformed request: {e}")),
    };
    match svc.submit(req) {
        Ok(id) => {
            let status = svc.snapshot(id).map(|s| s.status);
            let location = HeaderValue::from_str(&format!("/analyses/{id}")).expect("ascii path");
            (StatusCode::ACCEPTED, [(header::LOCATION, location)], Json(json!({ "id": id, "status": status })))
                .into_response()
        }
        Err(e) => error(StatusCode::BAD_REQUEST, e.0),
    }
}

async fn status(State(svc): State<Shared>, Path(raw): Path<String>) -> Response {
    let id = match job_id(&raw) {
        Ok(id) => id,
        Err(r) => return *r,
    };
    match svc.snapshot(id) {
        Some(s) => Json(s).into_response(),
        None => lookup_error(id, Lookup::Unknown),
    }
}

async fn report(State(svc): State<Shared>, Path(raw): Path<String>) -> Response {
    let id = match job_id(&raw) {
        Ok(id) => id,
        Err(r) => return *r,
    };
    match svc.result(id) {
        Ok(done) => json_text(StatusCode::OK, done.json.clone()),
        Err(l) => lookup_error(id, l),
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ColumnOrderRequest {
    columns: Vec<String>,
}

async fn column_order(State(svc): State<Shared>, Path(raw): Path<String>, body: Bytes) -> Response {
    let id = match job_id(&raw) {
        Ok(id) => id,
        Err(r) => return *r,
    };
    let done = match svc.result(id) {
        Ok(d) => d,
        Err(l) => return lookup_error(id, l),
    };
    let req: ColumnOrderRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("malformed request: {e}")),
    };
    match parse_column_order(&req.columns) {
        Ok(order) => Json(reorder_feature_level(&done.report.feature_level, &order)).into_response(),
        Err(e) => error(StatusCode::BAD_REQUEST, e.to_string()),
    }
}

async fn schema() -> Response {
    Json(report_schema()).into_response()
}

/// CORS for a browser UI. `origins` empty allows any origin.
pub fn cors(origins: &[String]) -> CorsLayer {
    let allow = if origins.is_empty() {
        AllowOrigin::any()
    } else {
        AllowOrigin::list(origins.iter().filter_map(|o| HeaderValue::from_str(o).ok()))
    };
    CorsLayer::new()
        .allow_origin(allow)
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([header::CONTENT_TYPE])
}

pub fn router(svc: Shared, origins: &[String]) -> Router {
    Router::new()
        .route("/analyses", post(create))
        .route("/analyses/{id}", get(status))
        .route("/analyses/{id}/report", get(report))
        .route("/analyses/{id}/column-order", post(column_order))
        .route("/schema", get(schema))
        .layer(cors(origins))
        .with_state(svc)
}

/// Serves until Ctrl-C.
pub async fn serve(listener: tokio::net::TcpListener, svc: Shared, origins: &[String]) -> std::io::Result<()> {
    let addr: SocketAddr = listener.local_addr()?;
    log::info!("listening on http://{addr}");
    axum::serve(listener, router(svc, origins))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
