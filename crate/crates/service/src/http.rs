//! Axum routes. Inference runs on the blocking pool.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;

use crate::api::{ReenactRequest, ReenactResponse, StatsReport, SweepRequest};
use crate::engine::Service;
use crate::error::ServiceError;

/// Bodies are parsed here rather than by `Json` so that every failure has the
/// same error shape.
fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, ServiceError> {
    serde_json::from_slice(body).map_err(|e| ServiceError::InvalidRequest(e.to_string()))
}

async fn blocking<T, F>(service: Arc<Service>, f: F) -> Result<T, ServiceError>
where
    T: Send + 'static,
    F: FnOnce(&Service) -> Result<T, ServiceError> + Send + 'static,
{
    tokio::task::spawn_blocking(move || f(&service))
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))?
}

async fn reenact(State(s): State<Arc<Service>>, body: Bytes) -> Result<Json<ReenactResponse>, ServiceError> {
    let req: ReenactRequest = parse(&body)?;
    blocking(s, move |s| s.reenact(&req)).await.map(Json)
}

async fn sweep(State(s): State<Arc<Service>>, body: Bytes) -> Result<Json<Vec<ReenactResponse>>, ServiceError> {
    let req: SweepRequest = parse(&body)?;
    blocking(s, move |s| s.sweep(&req)).await.map(Json)
}

async fn stats(State(s): State<Arc<Service>>) -> Json<StatsReport> {
    Json(s.stats())
}

async fn healthz() -> &'static str {
    "ok"
}

pub fn router(service: Arc<Service>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/v1/reenact", post(reenact))
        .route("/v1/sweep", post(sweep))
        .route("/v1/stats", get(stats))
        .with_state(service)
}

/// Serves until the process is stopped.
pub async fn serve(service: Arc<Service>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(service)).await
}
