use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::rejection::QueryRejection;
use axum::extract::{Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use crashcast_core::model::{BoundingBox, CrashRecord};
use crashcast_core::pipeline::read_csv;
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;
use tokio::task::JoinHandle;

use crate::service::{PredictionRequest, RejectedRecord, Service};
use crate::store::StoreError;
use crate::ServiceError;

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: &'static str,
    message: String,
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let (status, code) = match &self {
            ServiceError::BadRequest(_) => (StatusCode::BAD_REQUEST, "bad_request"),
            ServiceError::OutOfRegion(_) => (StatusCode::UNPROCESSABLE_ENTITY, "out_of_region"),
            ServiceError::ModelNotLoaded => (StatusCode::SERVICE_UNAVAILABLE, "model_not_loaded"),
            ServiceError::WeatherUnavailable(_) => (StatusCode::SERVICE_UNAVAILABLE, "weather_unavailable"),
            ServiceError::Store(StoreError::StorageFull { .. }) => (StatusCode::INSUFFICIENT_STORAGE, "storage_full"),
            ServiceError::Store(StoreError::InvalidRecord { .. }) => (StatusCode::BAD_REQUEST, "invalid_record"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        (status, Json(ErrorBody { error: code, message: self.to_string() })).into_response()
    }
}

type AppState = State<Arc<Service>>;

pub fn router(service: Arc<Service>) -> Router {
    Router::new()
        .route("/predict", post(predict))
        .route("/hotspots", get(hotspots))
        .route("/crashes", post(insert_crashes).get(query_crashes))
        .route("/health", get(health))
        .route("/metrics", get(metrics))
        .with_state(service)
}

async fn predict(State(s): AppState, body: Bytes) -> Result<Response, ServiceError> {
    let req: PredictionRequest =
        serde_json::from_slice(&body).map_err(|e| ServiceError::BadRequest(format!("request body: {e}")))?;
    Ok(Json(s.predict(&req)?).into_response())
}

#[derive(Debug, Deserialize)]
struct BboxQuery {
    min_lat: f64,
    min_lon: f64,
    max_lat: f64,
    max_lon: f64,
    at: Option<DateTime<Utc>>,
    k: Option<usize>,
    from: Option<DateTime<Utc>>,
    to: Option<DateTime<Utc>>,
    limit: Option<usize>,
}

impl BboxQuery {
    fn bbox(&self) -> Result<BoundingBox, ServiceError> {
        BoundingBox::new(self.min_lat, self.min_lon, self.max_lat, self.max_lon)
            .map_err(|e| ServiceError::BadRequest(format!("bbox: {e}")))
    }
}

fn parse_query(raw: Result<Query<BboxQuery>, QueryRejection>) -> Result<BboxQuery, ServiceError> {
    raw.map(|q| q.0).map_err(|e| ServiceError::BadRequest(format!("query: {e}")))
}

async fn hotspots(State(s): AppState, q: Result<Query<BboxQuery>, QueryRejection>) -> Result<Response, ServiceError> {
    let q = parse_query(q)?;
    Ok(Json(s.hotspots(&q.bbox()?, q.at, q.k)?).into_response())
}

async fn query_crashes(State(s): AppState, q: Result<Query<BboxQuery>, QueryRejection>) -> Result<Response, ServiceError> {
    let q = parse_query(q)?;
    Ok(Json(s.query_records(&q.bbox()?, q.from, q.to, q.limit)).into_response())
}

async fn insert_crashes(State(s): AppState, headers: HeaderMap, body: Bytes) -> Result<Response, ServiceError> {
    let is_csv = headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.contains("csv"));
    let (records, parse_errors) = if is_csv {
        let ingest = read_csv(&body[..]).map_err(|e| ServiceError::BadRequest(e.to_string()))?;
        // Header is line 1, so record n sits on line n + 1 when no row failed.
        let mut failed: Vec<u64> = ingest.errors.iter().map(|e| e.line).collect();
        failed.sort_unstable();
        let mut line = 1;
        let numbered = ingest
            .records
            .into_iter()
            .map(|r| {
                line += 1;
                while failed.binary_search(&line).is_ok() {
                    line += 1;
                }
                (line, r)
            })
            .collect();
        let errors = ingest.errors.into_iter().map(|e| RejectedRecord { line: e.line, message: e.message }).collect();
        (numbered, errors)
    } else {
        let list: Vec<CrashRecord> =
            serde_json::from_slice(&body).map_err(|e| ServiceError::BadRequest(format!("request body: {e}")))?;
        (list.into_iter().enumerate().map(|(i, r)| (i as u64 + 1, r)).collect(), Vec::new())
    };
    let s2 = s.clone();
    let mut report = tokio::task::spawn_blocking(move || s2.insert_records(records))
        .await
        .map_err(|e| ServiceError::Model(e.to_string()))??;
    report.rejected.extend(parse_errors);
    report.rejected.sort_by_key(|r| r.line);
    Ok(Json(report).into_response())
}

#[derive(Debug, Serialize)]
struct Health {
    status: &'static str,
    model_loaded: bool,
    generation: u64,
    stale: bool,
}

async fn health(State(s): AppState) -> Json<Health> {
    let r = s.refresh_status();
    let model_loaded = s.predictor().is_ok();
    let status = if model_loaded && !r.stale && r.generation > 0 { "ok" } else { "degraded" };
    Json(Health { status, model_loaded, generation: r.generation, stale: r.stale })
}

async fn metrics(State(s): AppState) -> Response {
    Json(s.metrics()).into_response()
}

/// Polls the clock and rebuilds the primary cache whenever it is due.
pub fn spawn_refresher(service: Arc<Service>, poll: Duration) -> JoinHandle<()> {
    tokio::spawn(async move {
        loop {
            let s = service.clone();
            let _ = tokio::task::spawn_blocking(move || s.refresh_if_due()).await;
            tokio::time::sleep(poll).await;
        }
    })
}

/// Binds `addr`, starts the refresher and serves until the task is dropped.
pub async fn start(service: Arc<Service>, addr: SocketAddr, refresh_poll: Duration) -> std::io::Result<(SocketAddr, JoinHandle<()>)> {
    let listener = TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    let refresher = spawn_refresher(service.clone(), refresh_poll);
    let app = router(service);
    let handle = tokio::spawn(async move {
        let _ = axum::serve(listener, app).await;
        refresher.abort();
    });
    Ok((local, handle))
}
