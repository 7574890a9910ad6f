//! HTTP front of the review queue.
//!
//! | method | path                   | response                                        |
//! |--------|------------------------|-------------------------------------------------|
//! | GET    | `/api/queue/next`      | 200 oldest pending `ReviewItem`, 204 when empty |
//! | POST   | `/api/verdict`         | 200 `Verdict`; 404 unknown id; 409 with the original verdict |
//! | GET    | `/api/stats`           | 200 `QueueStats`                                |
//! | GET    | `/api/item/{id}/image` | 200 image bytes; 404 unknown id or missing file |
//!
//! All mutations go through one mutex-guarded [`ReviewQueue`], which appends
//! and syncs each event to its log before the response is sent.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard};

use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use engine_core::review::{now_millis, ReviewError, ReviewQueue, VerdictDecision};
use engine_core::{hash_content, SampleId};
use serde::Deserialize;
use serde_json::json;

pub struct AppState {
    queue: Mutex<ReviewQueue>,
    image_root: PathBuf,
}

impl AppState {
    /// `image_root` resolves relative `image_path`s of queued items.
    pub fn new(queue: ReviewQueue, image_root: impl Into<PathBuf>) -> Arc<Self> {
        Arc::new(AppState {
            queue: Mutex::new(queue),
            image_root: image_root.into(),
        })
    }

    fn queue(&self) -> MutexGuard<'_, ReviewQueue> {
        // A panic while holding the lock cannot leave a half-applied event:
        // state only changes after the log write succeeds.
        self.queue.lock().unwrap_or_else(|e| e.into_inner())
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerdictRequest {
    pub id: String,
    pub decision: VerdictDecision,
    pub reviewer: String,
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": message.into() }))).into_response()
}

async fn next_item(State(state): State<Arc<AppState>>) -> Response {
    match state.queue().next_item() {
        Some(item) => Json(item.clone()).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    }
}

async fn stats(State(state): State<Arc<AppState>>) -> Response {
    Json(state.queue().stats()).into_response()
}

async fn verdict(State(state): State<Arc<AppState>>, Json(req): Json<VerdictRequest>) -> Response {
    let id: SampleId = match req.id.parse() {
        Ok(id) => id,
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("{e}")),
    };
    let result = tokio::task::spawn_blocking(move || {
        state
            .queue()
            .submit_verdict(id, req.decision, req.reviewer, now_millis())
    })
    .await;
    match result {
        Ok(Ok(v)) => Json(v).into_response(),
        Ok(Err(ReviewError::NotFound(id))) => error(StatusCode::NOT_FOUND, format!("no queued item {id}")),
        Ok(Err(ReviewError::Conflict { existing })) => (
            StatusCode::CONFLICT,
            Json(json!({ "error": "verdict already recorded", "verdict": existing })),
        )
            .into_response(),
        Ok(Err(e)) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

async fn image(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Response {
    let Ok(id) = id.parse::<SampleId>() else {
        return error(StatusCode::NOT_FOUND, "unknown id");
    };
    let Some(rel) = state.queue().state().item(&id).map(|i| i.image_path.clone()) else {
        return error(StatusCode::NOT_FOUND, format!("no queued item {id}"));
    };
    let path = state.image_root.join(rel);
    match tokio::fs::read(&path).await {
        Ok(bytes) => {
            let mime = mime_guess::from_path(&path).first_or_octet_stream();
            ([(header::CONTENT_TYPE, mime.to_string())], bytes).into_response()
        }
        Err(e) => error(StatusCode::NOT_FOUND, format!("{}: {e}", path.display())),
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/queue/next", get(next_item))
        .route("/api/verdict", post(verdict))
        .route("/api/stats", get(stats))
        .route("/api/item/{id}/image", get(image))
        .with_state(state)
}

/// Serves until `shutdown` resolves or the listener fails.
pub async fn serve<F>(listener: tokio::net::TcpListener, state: Arc<AppState>, shutdown: F) -> std::io::Result<()>
where
    F: std::future::Future<Output = ()> + Send + 'static,
{
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
}

#[derive(Debug, thiserror::Error)]
pub enum IndexError {
    #[error("walking {path}: {message}")]
    Walk { path: String, message: String },
    #[error("reading {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Content-hash index of every file under `dir`, as paths relative to `dir`.
/// Identical files map to the lexicographically first path.
pub fn index_images(dir: &Path) -> Result<BTreeMap<SampleId, String>, IndexError> {
    let mut out = BTreeMap::new();
    for entry in walkdir::WalkDir::new(dir).sort_by_file_name() {
        let entry = entry.map_err(|e| IndexError::Walk {
            path: dir.display().to_string(),
            message: e.to_string(),
        })?;
        if !entry.file_type().is_file() {
            continue;
        }
        let bytes = std::fs::read(entry.path()).map_err(|source| IndexError::Read {
            path: entry.path().display().to_string(),
            source,
        })?;
        let id: SampleId = hash_content(&bytes).parse().expect("hash is a valid id");
        let rel = entry
            .path()
            .strip_prefix(dir)
            .unwrap_or(entry.path())
            .to_string_lossy()
            .into_owned();
        out.entry(id).or_insert(rel);
    }
    Ok(out)
}
