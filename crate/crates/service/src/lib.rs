//! HTTP lookup service: a frozen PoseFormer plus a support set that can grow
//! while serving.
//!
//! | method | path               | response                                   |
//! |--------|--------------------|--------------------------------------------|
//! | GET    | `/healthz`         | `{"status":"ok"}`                          |
//! | GET    | `/v1/support/info` | count, dim, fingerprint, similarity, temp  |
//! | GET    | `/v1/labels`       | `{"labels":[...]}`                         |
//! | GET    | `/v1/stats`        | request counters                           |
//! | POST   | `/v1/query`        | top-k labels with probabilities            |
//! | POST   | `/v1/support/add`  | 201 with the new info; 409 on a duplicate  |
//!
//! Errors are `{"error": "..."}` with 400 for malformed requests, 422 when a
//! well-formed sequence cannot be normalized, 413 above [`MAX_BODY_BYTES`].

mod routes;
mod state;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::DefaultBodyLimit;
use axum::http::{header, Method};
use axum::routing::{get, post};
use axum::Router;
use thiserror::Error;
use tower_http::cors::{Any, CorsLayer};

pub use routes::{QueryResponse, SupportInfo, DEFAULT_K};
pub use state::{CounterSnapshot, Counters, ServiceState, WalRecord};

/// Request body cap; generous for minutes of landmarks.
pub const MAX_BODY_BYTES: usize = 5 * 1024 * 1024;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("refusing to start: {0}")]
    Startup(String),
    #[error("cannot listen on {addr}: {message}")]
    Bind { addr: SocketAddr, message: String },
    #[error("server error: {0}")]
    Server(String),
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub model: PathBuf,
    pub support: PathBuf,
    /// Log of added entries; `None` keeps additions in memory only.
    pub wal: Option<PathBuf>,
    pub addr: SocketAddr,
}

pub fn router(state: Arc<ServiceState>) -> Router {
    let cors = CorsLayer::new()
        .allow_origin(Any)
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([header::CONTENT_TYPE]);
    Router::new()
        .route("/healthz", get(routes::healthz))
        .route("/v1/support/info", get(routes::support_info))
        .route("/v1/labels", get(routes::labels))
        .route("/v1/stats", get(routes::stats))
        .route("/v1/query", post(routes::query))
        .route("/v1/support/add", post(routes::add))
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .layer(cors)
        .with_state(state)
}

/// Loads everything, then binds and serves until Ctrl-C. Nothing listens
/// until the support set is ready.
pub async fn serve(config: ServiceConfig) -> Result<(), ServiceError> {
    let loader = config.clone();
    let state = tokio::task::spawn_blocking(move || {
        ServiceState::load(&loader.model, &loader.support, loader.wal.as_deref())
    })
    .await
    .map_err(|e| ServiceError::Startup(e.to_string()))??;
    let listener = tokio::net::TcpListener::bind(config.addr)
        .await
        .map_err(|e| ServiceError::Bind { addr: config.addr, message: e.to_string() })?;
    let info = SupportInfo::of(&state.support());
    log::info!(
        "serving {} labels ({}, model {}) on http://{}",
        info.count,
        info.similarity,
        &info.model_fingerprint[..12],
        listener.local_addr().map_or(config.addr, |a| a)
    );
    axum::serve(listener, router(Arc::new(state)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| ServiceError::Server(e.to_string()))
}
