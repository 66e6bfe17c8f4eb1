use std::sync::atomic::Ordering;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use signshot::keypoints::{parse_poseseq_value, KeypointError, KeypointSequence};
use signshot::poseformer::{EmbeddingVector, ModelError, PoseFormerModel};
use signshot::retrieval::{RankedEntry, SupportSet};

use crate::state::{CounterSnapshot, ServiceState, WalRecord};

pub const DEFAULT_K: usize = 5;

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct SupportInfo {
    pub count: usize,
    pub dim: usize,
    pub model_fingerprint: String,
    pub similarity: String,
    pub temperature: f64,
}

impl SupportInfo {
    pub fn of(support: &SupportSet) -> Self {
        SupportInfo {
            count: support.len(),
            dim: support.dim(),
            model_fingerprint: hex::encode(support.model_fingerprint()),
            similarity: support.similarity().name().to_string(),
            temperature: support.temperature() as f64,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct QueryRequest {
    poseseq: Value,
    #[serde(default = "default_k")]
    k: usize,
    temperature: Option<f64>,
}

fn default_k() -> usize {
    DEFAULT_K
}

#[derive(Debug, Serialize, Deserialize)]
pub struct QueryResponse {
    pub results: Vec<RankedEntry>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AddRequest {
    label: String,
    poseseq: Value,
}

#[derive(Debug)]
pub(crate) struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError { status, message: message.into() }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

/// Counts client errors on the way out.
fn tally<T>(state: &ServiceState, result: Result<T, ApiError>) -> Result<T, ApiError> {
    if let Err(e) = &result {
        if e.status.is_client_error() {
            state.counters.client_errors.fetch_add(1, Ordering::Relaxed);
        } else {
            log::error!("{}", e.message);
        }
    }
    result
}

pub(crate) async fn healthz() -> Json<Value> {
    Json(json!({ "status": "ok" }))
}

pub(crate) async fn support_info(State(state): State<Arc<ServiceState>>) -> Json<SupportInfo> {
    Json(SupportInfo::of(&state.support()))
}

pub(crate) async fn labels(State(state): State<Arc<ServiceState>>) -> Json<Value> {
    Json(json!({ "labels": state.support().labels() }))
}

pub(crate) async fn stats(State(state): State<Arc<ServiceState>>) -> Json<CounterSnapshot> {
    Json(state.counters.snapshot())
}

pub(crate) async fn query(State(state): State<Arc<ServiceState>>, body: Bytes) -> Result<Json<QueryResponse>, ApiError> {
    state.counters.queries.fetch_add(1, Ordering::Relaxed);
    let result = run_query(&state, &body).await;
    tally(&state, result)
}

async fn run_query(state: &ServiceState, body: &[u8]) -> Result<Json<QueryResponse>, ApiError> {
    let req: QueryRequest = parse_body(body)?;
    let seq = parse_document(&req.poseseq)?;
    // one snapshot for the whole request, even if an add lands meanwhile
    let support = state.support();
    if req.k == 0 || req.k > support.len() {
        return Err(ApiError::bad_request(format!("k must be in 1..={}, got {}", support.len(), req.k)));
    }
    if let Some(t) = req.temperature {
        if !(t > 0.0 && t.is_finite()) {
            return Err(ApiError::bad_request(format!("temperature must be positive and finite, got {t}")));
        }
    }
    let embedding = embed(state.model().clone(), seq).await?;
    let ranked = support
        .query_embedding(&embedding, req.k, req.temperature)
        .map_err(|e| ApiError::internal(e.to_string()))?;
    Ok(Json(QueryResponse { results: ranked.entries }))
}

pub(crate) async fn add(State(state): State<Arc<ServiceState>>, body: Bytes) -> Result<Response, ApiError> {
    let result = run_add(&state, &body).await;
    tally(&state, result)
}

async fn run_add(state: &ServiceState, body: &[u8]) -> Result<Response, ApiError> {
    let req: AddRequest = parse_body(body)?;
    let label = req.label.trim();
    if label.is_empty() || label.chars().any(char::is_control) {
        return Err(ApiError::bad_request("label must be non-empty and free of control characters"));
    }
    let seq = parse_document(&req.poseseq)?;

    let mut writer = state.writer.lock().await;
    let current = state.support();
    if current.contains(label) {
        return Err(ApiError::new(StatusCode::CONFLICT, format!("label {label:?} already exists")));
    }
    let embedding = embed(state.model().clone(), seq).await?;
    let next = current.with_entry(label, embedding).map_err(|e| ApiError::internal(e.to_string()))?;
    if let Some(wal) = writer.as_mut() {
        wal.append(&WalRecord { label: label.to_string(), poseseq: req.poseseq })
            .map_err(|e| ApiError::internal(e.to_string()))?;
    }
    let info = SupportInfo::of(&next);
    state.publish(next);
    drop(writer);
    state.counters.adds.fetch_add(1, Ordering::Relaxed);
    log::info!("added {label:?}; support set now has {} entries", info.count);
    Ok((StatusCode::CREATED, Json(info)).into_response())
}

fn parse_body<T: DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("malformed request body: {e}")))
}

fn parse_document(doc: &Value) -> Result<KeypointSequence, ApiError> {
    parse_poseseq_value(doc).map_err(|e| ApiError::bad_request(e.to_string()))
}

/// Embeds on the blocking pool; normalization failures are the client's problem.
async fn embed(model: Arc<PoseFormerModel>, seq: KeypointSequence) -> Result<EmbeddingVector, ApiError> {
    let embedded = tokio::task::spawn_blocking(move || model.embed(&seq))
        .await
        .map_err(|e| ApiError::internal(format!("embedding task failed: {e}")))?;
    embedded.map_err(|e| match e {
        ModelError::Keypoints(k @ (KeypointError::NoPoseFrames | KeypointError::DegenerateScale)) => {
            ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, k.to_string())
        }
        other => ApiError::internal(other.to_string()),
    })
}
