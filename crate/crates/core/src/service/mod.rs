//! JSON-over-HTTP front end.
//!
//! | method | path             | body                                    |
//! |--------|------------------|-----------------------------------------|
//! | GET    | `/api/health`    | 200 once a model is loaded, else 503    |
//! | GET    | `/api/model`     | config, vocabulary size, checkpoint hash |
//! | POST   | `/api/complete`  | [`CompletionRequest`]                   |
//! | POST   | `/api/parse`     | `{"sfiles": "...", "mode": "lenient"}`  |
//! | POST   | `/api/serialize` | `{"graph": {...}, "partial": false}`    |
//!
//! Errors are `{"error": "...", "position": n}`: 400 for malformed input,
//! 422 for lexical errors in SFILES strings, 503 while no model is loaded.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::decoding::DecodeError;
use crate::interface::{complete, CompletionRequest, InterfaceError};
use crate::sfiles::{self, parse_with_warnings, serialize, serialize_partial, to_json_value, validate, Mode, SfilesError};
use crate::tokenizer::{tokenize_with_mode, TokenizeError};
use crate::transformer::Checkpoint;

/// Environment variable naming the checkpoint `serve` loads by default.
pub const CHECKPOINT_ENV: &str = "FLOWCOMPLETE_CHECKPOINT";

pub struct Snapshot {
    pub checkpoint: Checkpoint,
    pub hash: String,
}

impl Snapshot {
    pub fn new(checkpoint: Checkpoint) -> Self {
        let hash = checkpoint.hash();
        Self { checkpoint, hash }
    }
}

#[derive(Default)]
pub struct AppState {
    model: RwLock<Option<Arc<Snapshot>>>,
    load_error: RwLock<Option<String>>,
}

impl AppState {
    pub fn empty() -> Arc<Self> {
        Arc::new(Self::default())
    }

    pub fn with_checkpoint(ckpt: Checkpoint) -> Arc<Self> {
        let s = Self::empty();
        s.swap(ckpt);
        s
    }

    /// Replaces the served model; requests in flight keep the old one.
    pub fn swap(&self, ckpt: Checkpoint) {
        let snap = Arc::new(Snapshot::new(ckpt));
        *self.model.write().expect("model lock") = Some(snap);
        *self.load_error.write().expect("error lock") = None;
    }

    pub fn snapshot(&self) -> Option<Arc<Snapshot>> {
        self.model.read().expect("model lock").clone()
    }

    /// Loads a checkpoint on a blocking thread and swaps it in.
    pub fn load_in_background(self: &Arc<Self>, dir: PathBuf) -> tokio::task::JoinHandle<()> {
        let state = Arc::clone(self);
        tokio::task::spawn_blocking(move || match Checkpoint::load(&dir) {
            Ok(ckpt) => {
                eprintln!("loaded checkpoint {}", dir.display());
                state.swap(ckpt);
            }
            Err(e) => {
                eprintln!("failed to load checkpoint {}: {e}", dir.display());
                *state.load_error.write().expect("error lock") = Some(e.to_string());
            }
        })
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: Value,
}

impl ApiError {
    fn new(status: StatusCode, error: impl ToString, position: Option<usize>) -> Self {
        Self { status, body: json!({ "error": error.to_string(), "position": position }) }
    }

    fn bad_request(error: impl ToString) -> Self {
        Self::new(StatusCode::BAD_REQUEST, error, None)
    }

    fn unavailable() -> Self {
        Self::new(StatusCode::SERVICE_UNAVAILABLE, "no model loaded", None)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<TokenizeError> for ApiError {
    fn from(e: TokenizeError) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, &e, Some(e.position()))
    }
}

impl From<SfilesError> for ApiError {
    fn from(e: SfilesError) -> Self {
        let status = if e.is_lexical() { StatusCode::UNPROCESSABLE_ENTITY } else { StatusCode::BAD_REQUEST };
        let mut err = Self::new(status, &e, e.position());
        if let SfilesError::InvalidGraph(v) = &e {
            err.body["violations"] = json!(v);
        }
        err
    }
}

impl From<InterfaceError> for ApiError {
    fn from(e: InterfaceError) -> Self {
        match e {
            InterfaceError::NoModelLoaded => Self::unavailable(),
            InterfaceError::Tokenize(t) => t.into(),
            InterfaceError::Graph(g) => g.into(),
            InterfaceError::Decode(DecodeError::Model(m)) => {
                Self::new(StatusCode::INTERNAL_SERVER_ERROR, m, None)
            }
            InterfaceError::Decode(d) => Self::bad_request(d),
        }
    }
}

/// Body parsing with our own error shape instead of axum's rejections.
fn body<T: DeserializeOwned>(bytes: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(bytes).map_err(|e| {
        let line_start: usize =
            bytes.split(|&b| b == b'\n').take(e.line().saturating_sub(1)).map(|l| l.len() + 1).sum();
        let position = (e.line() > 0).then(|| line_start + e.column().saturating_sub(1));
        ApiError::new(StatusCode::BAD_REQUEST, format!("malformed request body: {e}"), position)
    })
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/health", get(health))
        .route("/api/model", get(model_info))
        .route("/api/complete", post(complete_handler))
        .route("/api/parse", post(parse_handler))
        .route("/api/serialize", post(serialize_handler))
        .with_state(state)
}

async fn health(State(state): State<Arc<AppState>>) -> Response {
    match state.snapshot() {
        Some(_) => (StatusCode::OK, Json(json!({ "status": "ok" }))).into_response(),
        None => {
            let error = state.load_error.read().expect("error lock").clone();
            let status = if error.is_some() { "error" } else { "loading" };
            (StatusCode::SERVICE_UNAVAILABLE, Json(json!({ "status": status, "error": error }))).into_response()
        }
    }
}

async fn model_info(State(state): State<Arc<AppState>>) -> Result<Json<Value>, ApiError> {
    let snap = state.snapshot().ok_or_else(ApiError::unavailable)?;
    let ck = &snap.checkpoint;
    Ok(Json(json!({
        "config": ck.params.cfg,
        "vocab_size": ck.vocab.len(),
        "parameters": ck.params.data.len(),
        "checkpoint_hash": snap.hash,
        "training": ck.meta,
    })))
}

async fn complete_handler(State(state): State<Arc<AppState>>, bytes: Bytes) -> Result<Json<Value>, ApiError> {
    let req: CompletionRequest = body(&bytes)?;
    let snap = state.snapshot().ok_or_else(ApiError::unavailable)?;
    let resp = tokio::task::spawn_blocking(move || complete(&snap.checkpoint, &req))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e, None))??;
    Ok(Json(serde_json::to_value(resp).expect("response serialises")))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ParseRequest {
    sfiles: String,
    #[serde(default)]
    mode: Mode,
}

#[derive(Serialize)]
struct ParseResponse {
    graph: Value,
    /// Canonical re-serialization; null when the graph breaks a rule.
    canonical: Option<String>,
    tokens: Vec<String>,
    warnings: Vec<sfiles::ParseWarning>,
    violations: Vec<sfiles::Violation>,
}

async fn parse_handler(bytes: Bytes) -> Result<Json<ParseResponse>, ApiError> {
    let req: ParseRequest = body(&bytes)?;
    let tokens = tokenize_with_mode(&req.sfiles, req.mode)?.tokens.into_iter().map(|t| t.text).collect();
    let (g, warnings) = parse_with_warnings(&req.sfiles, req.mode)?;
    let violations = validate(&g);
    let canonical = if violations.is_empty() { serialize(&g).ok() } else { None };
    Ok(Json(ParseResponse { graph: to_json_value(&g), canonical, tokens, warnings, violations }))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SerializeRequest {
    graph: Value,
    #[serde(default)]
    partial: bool,
}

async fn serialize_handler(bytes: Bytes) -> Result<Json<Value>, ApiError> {
    let req: SerializeRequest = body(&bytes)?;
    let g = sfiles::from_json_value(req.graph)?;
    let s = if req.partial { serialize_partial(&g)? } else { serialize(&g)? };
    Ok(Json(json!({ "sfiles": s })))
}

/// Binds `addr` and serves until Ctrl-C. The checkpoint, if any, loads in
/// the background; `/api/health` reports 503 until it is ready.
pub async fn serve(addr: SocketAddr, checkpoint: Option<PathBuf>) -> std::io::Result<()> {
    let state = AppState::empty();
    if let Some(dir) = checkpoint {
        state.load_in_background(dir);
    }
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
