//! HTTP front end for review sessions.
//!
//! ```text
//! POST /sessions                 {run_id, proportion}       -> {session_id, length}
//! GET  /sessions/{id}/next                                  -> {item_id, kind, image, display_ms} | {done: true}
//! POST /sessions/{id}/judgments  {item_id, label, latency_ms}
//! GET  /sessions/{id}/results                               -> fusion result
//! ```
//! Errors are `{code, message}` with 400, 404 or 409.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use camoguard_core::config::RunConfig;
use camoguard_core::review::{Judgment, Next, ReviewRun, SessionStore, StoreConfig};
use camoguard_core::synth::read_split;
use camoguard_core::uncertainty::read_scores;
use camoguard_core::Error;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::artifacts::{read_predictions, PREDICTIONS, SCORES, TEST_DIR, TRAIN_DIR};
use crate::error::{CliError, CliResult, Kind};

pub struct ServeOptions {
    pub addr: String,
    pub run_id: String,
    pub snapshot_dir: Option<PathBuf>,
    pub manual_fillers: bool,
    pub extra_fillers: usize,
}

/// Test predictions, scores and images of a scored run, with the train split as filler pool.
pub fn load_review_run(cfg: &RunConfig) -> CliResult<ReviewRun> {
    let preds = read_predictions(&cfg.paths.run_dir.join(PREDICTIONS))?;
    let scores = read_scores(&cfg.paths.run_dir.join(SCORES))?;
    let images = read_split(&cfg.paths.data_dir.join(TEST_DIR))?
        .into_iter()
        .map(|s| (s.id, s))
        .collect::<BTreeMap<_, _>>();
    let fillers = read_split(&cfg.paths.data_dir.join(TRAIN_DIR))?
        .into_iter()
        .map(|s| (s.id, s))
        .collect();
    if let Some(r) = preds.iter().find(|r| !images.contains_key(&r.sample_id)) {
        return Err(CliError::new(
            Kind::Schema,
            format!("prediction for sample {} has no test image", r.sample_id),
        ));
    }
    Ok(ReviewRun {
        model_preds: preds.iter().map(|r| (r.sample_id, r.predicted)).collect(),
        truths: preds.iter().map(|r| (r.sample_id, r.label)).collect(),
        scores: scores.iter().map(|r| (r.sample_id, r.score)).collect(),
        images,
        fillers,
    })
}

pub fn serve(cfg: &RunConfig, opts: ServeOptions) -> CliResult<()> {
    let run = load_review_run(cfg)?;
    if let Some(dir) = &opts.snapshot_dir {
        std::fs::create_dir_all(dir)?;
    }
    let mut store = SessionStore::new(StoreConfig {
        seed: cfg.train.seed,
        auto_advance_fillers: !opts.manual_fillers,
        extra_fillers: opts.extra_fillers,
        snapshot_dir: opts.snapshot_dir,
    });
    store.add_run(&opts.run_id, run);
    let app = router(Arc::new(store));
    let runtime = tokio::runtime::Runtime::new()?;
    runtime
        .block_on(async move {
            let listener = tokio::net::TcpListener::bind(&opts.addr).await?;
            log::info!(
                "serving run `{}` on {}",
                opts.run_id,
                listener.local_addr()?
            );
            axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = tokio::signal::ctrl_c().await;
                })
                .await
        })
        .map_err(|e| CliError::new(Kind::Io, e.to_string()))
}

pub fn router(store: Arc<SessionStore>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/next", get(next_item))
        .route("/sessions/{id}/judgments", post(submit_judgment))
        .route("/sessions/{id}/results", get(results))
        .with_state(store)
}

pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let (status, code) = match &e {
            Error::UnknownSession(_) => (StatusCode::NOT_FOUND, "unknown_session"),
            Error::Conflict(m) if m.starts_with("duplicate") => {
                (StatusCode::CONFLICT, "duplicate_judgment")
            }
            Error::Conflict(m) if m.starts_with("out-of-order") => {
                (StatusCode::CONFLICT, "out_of_order")
            }
            Error::Conflict(_) => (StatusCode::CONFLICT, "conflict"),
            Error::SessionIncomplete { .. } => (StatusCode::CONFLICT, "session_incomplete"),
            Error::Input(_) => (StatusCode::BAD_REQUEST, "invalid_input"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        ApiError {
            status,
            code,
            message: e.to_string(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (
            self.status,
            Json(json!({ "code": self.code, "message": self.message })),
        )
            .into_response()
    }
}

fn parse_body<T: serde::de::DeserializeOwned>(body: &str) -> Result<T, ApiError> {
    serde_json::from_str(body).map_err(|e| ApiError {
        status: StatusCode::BAD_REQUEST,
        code: "bad_request",
        message: e.to_string(),
    })
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateSession {
    run_id: String,
    proportion: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionCreated {
    pub session_id: String,
    pub length: usize,
}

async fn create_session(
    State(store): State<Arc<SessionStore>>,
    body: String,
) -> Result<impl IntoResponse, ApiError> {
    let req: CreateSession = parse_body(&body)?;
    let (session_id, length) = store.create_session(&req.run_id, req.proportion)?;
    Ok((
        StatusCode::CREATED,
        Json(SessionCreated { session_id, length }),
    ))
}

async fn next_item(
    State(store): State<Arc<SessionStore>>,
    Path(id): Path<String>,
) -> Result<Response, ApiError> {
    Ok(match store.next_item(&id)? {
        Next::Item {
            item_id,
            kind,
            image,
            display_ms,
        } => Json(json!({
            "item_id": item_id,
            "kind": kind,
            "image": base64::engine::general_purpose::STANDARD.encode(image),
            "display_ms": display_ms,
        }))
        .into_response(),
        Next::Done => Json(json!({ "done": true })).into_response(),
    })
}

async fn submit_judgment(
    State(store): State<Arc<SessionStore>>,
    Path(id): Path<String>,
    body: String,
) -> Result<impl IntoResponse, ApiError> {
    let judgment: Judgment = parse_body(&body)?;
    store.submit_judgment(&id, judgment)?;
    let remaining = store.snapshot(&id)?.remaining_targets();
    Ok(Json(json!({ "accepted": true, "remaining": remaining })))
}

async fn results(
    State(store): State<Arc<SessionStore>>,
    Path(id): Path<String>,
) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(store.results(&id)?))
}
