//! HTTP front for a trained model: `POST /recognize`, `GET /health` and
//! `POST /feedback`.
//!
//! Request bodies are JSON. Both POST bodies carry the trace under `"ink"`
//! in the same grammar as `.ink.json` files:
//!
//! ```text
//! POST /recognize  {"ink": {...}, "n": 5}
//! POST /feedback   {"ink": {...}, "label": "..."}
//! ```

use std::fs;
use std::io::{ErrorKind, Write};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::Mutex;
use tower_http::cors::{Any, CorsLayer};

use hwr_core::hmm::DecodeStatus;
use hwr_core::ink::{ink_from_value, write_ink};
use hwr_core::pipeline::{Recognizer, SegmentSpan};

/// Version of the request/response schemas below.
pub const API_VERSION: u32 = 1;
pub const DEFAULT_TOPN: usize = 5;
pub const MAX_TOPN: usize = 50;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecognizeRequest {
    pub ink: Value,
    #[serde(default = "default_topn")]
    pub n: usize,
}

fn default_topn() -> usize {
    DEFAULT_TOPN
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedHypothesis {
    pub rank: usize,
    pub label: String,
    pub log_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecognizeResponse {
    pub api_version: u32,
    pub model_version: String,
    /// `"ok"`, or `"no_alignment"` when no lexicon entry fits the trace.
    pub status: String,
    pub hypotheses: Vec<RankedHypothesis>,
    pub segments: Vec<SegmentSpan>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedbackRequest {
    pub ink: Value,
    pub label: Option<String>,
}

/// Shared, read-only after startup except for the feedback writer.
pub struct AppState {
    recognizer: Option<Arc<Recognizer>>,
    started: Instant,
    feedback_dir: Option<PathBuf>,
    // Serializes feedback writes.
    feedback_seq: Mutex<u64>,
}

impl AppState {
    pub fn new(recognizer: Option<Recognizer>, feedback_dir: Option<PathBuf>) -> Self {
        Self { recognizer: recognizer.map(Arc::new), started: Instant::now(), feedback_dir, feedback_seq: Mutex::new(0) }
    }
}

/// Allowed browser origins: everything, or one fixed origin.
#[derive(Debug, Clone, Default)]
pub enum CorsOrigin {
    #[default]
    Any,
    Exact(HeaderValue),
}

pub fn router(state: AppState, cors: CorsOrigin) -> Router {
    let layer = CorsLayer::new().allow_methods(Any).allow_headers(Any);
    let layer = match cors {
        CorsOrigin::Any => layer.allow_origin(Any),
        CorsOrigin::Exact(origin) => layer.allow_origin(origin),
    };
    Router::new()
        .route("/recognize", post(recognize))
        .route("/health", get(health))
        .route("/feedback", post(feedback))
        .layer(layer)
        .with_state(Arc::new(state))
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": message.into() }))).into_response()
}

fn parse_body<T: serde::de::DeserializeOwned>(body: &Bytes) -> Result<T, Response> {
    serde_json::from_slice(body).map_err(|e| error(StatusCode::BAD_REQUEST, format!("invalid request body: {e}")))
}

async fn recognize(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    let Some(rec) = state.recognizer.clone() else {
        return error(StatusCode::SERVICE_UNAVAILABLE, "no model loaded");
    };
    let req: RecognizeRequest = match parse_body(&body) {
        Ok(r) => r,
        Err(resp) => return resp,
    };
    if !(1..=MAX_TOPN).contains(&req.n) {
        return error(StatusCode::BAD_REQUEST, format!("n must be in 1..={MAX_TOPN}, got {}", req.n));
    }
    let trace = match ink_from_value(req.ink) {
        Ok(t) => t,
        Err(e) if e.is_degenerate() => return error(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()),
        Err(e) => return error(StatusCode::BAD_REQUEST, e.to_string()),
    };
    let n = req.n;
    let job = tokio::task::spawn_blocking(move || rec.recognize(&trace, n).map(|r| (r, rec.version().to_string())));
    match job.await {
        Ok(Ok((r, model_version))) => {
            let status = match r.result.status {
                DecodeStatus::Ok => "ok",
                DecodeStatus::NoAlignment => "no_alignment",
            };
            let hypotheses = r.result.hypotheses.into_iter().enumerate().map(|(i, h)| RankedHypothesis { rank: i + 1, label: h.label, log_score: h.log_score }).collect();
            Json(RecognizeResponse { api_version: API_VERSION, model_version, status: status.into(), hypotheses, segments: r.segments }).into_response()
        }
        Ok(Err(e)) if e.is_degenerate_input() => error(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()),
        Ok(Err(e)) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

async fn health(State(state): State<Arc<AppState>>) -> Json<Value> {
    let model = state.recognizer.as_ref().map(|r| {
        json!({
            "version": r.version(),
            "variant": r.model().variant.name(),
            "alphabet_size": r.model().alphabet.len(),
            "lexicon_size": r.model().lexicon.len(),
        })
    });
    Json(json!({
        "status": "ok",
        "api_version": API_VERSION,
        "model_version": state.recognizer.as_ref().map(|r| r.version()),
        "alphabet_size": state.recognizer.as_ref().map(|r| r.model().alphabet.len()),
        "model": model,
        "uptime_s": state.started.elapsed().as_secs_f64(),
    }))
}

async fn feedback(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    let req: FeedbackRequest = match parse_body(&body) {
        Ok(r) => r,
        Err(resp) => return resp,
    };
    let Some(label) = req.label.filter(|l| !l.trim().is_empty()) else {
        return error(StatusCode::BAD_REQUEST, "label is required");
    };
    let trace = match ink_from_value(req.ink) {
        Ok(t) => t.with_label(label),
        Err(e) => return error(StatusCode::BAD_REQUEST, e.to_string()),
    };
    let Some(dir) = state.feedback_dir.clone() else {
        return error(StatusCode::INSUFFICIENT_STORAGE, "no feedback directory configured");
    };
    let mut seq = state.feedback_seq.lock().await;
    let stamp = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis());
    let bytes = write_ink(&trace);
    let stored = (|| -> std::io::Result<String> {
        fs::create_dir_all(&dir)?;
        loop {
            *seq += 1;
            let name = format!("feedback-{stamp}-{:04}.ink.json", *seq);
            match fs::OpenOptions::new().write(true).create_new(true).open(dir.join(&name)) {
                Ok(mut f) => {
                    f.write_all(&bytes)?;
                    return Ok(name);
                }
                Err(e) if e.kind() == ErrorKind::AlreadyExists => continue,
                Err(e) => return Err(e),
            }
        }
    })();
    match stored {
        Ok(file) => (StatusCode::CREATED, Json(json!({ "file": file }))).into_response(),
        Err(e) => error(StatusCode::INSUFFICIENT_STORAGE, format!("cannot store feedback: {e}")),
    }
}
