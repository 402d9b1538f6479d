//! HTTP+JSON front of the review queue for the browser UI.
//!
//! Every mutation goes through one mutex around [`ReviewState`]; reads take the same
//! lock, so each response reflects a single state version. Image rendering happens
//! outside the lock on the blocking pool.

use std::future::Future;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, MutexGuard};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{any, get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::Deserialize;
use serde_json::json;
use tower_http::services::ServeDir;

use mnistgen_core::acquisition::PoolStore;
use mnistgen_core::curation::modes::DecisionRecord;
use mnistgen_core::raster::encode_png;
use mnistgen_core::review::{HumanDecision, QueueItem, ReviewState};
use mnistgen_core::transforms::{AnnotatedImage, LookupTagger, Pipeline, StageContext};
use mnistgen_core::workflow::Run;
use mnistgen_core::Error;

pub const DEFAULT_LIMIT: usize = 20;
pub const MAX_LIMIT: usize = 500;

/// PNG renderings of pool images for thumbnails and `/api/image`.
pub trait ImageRenderer: Send + Sync {
    fn raw(&self, id: &str) -> mnistgen_core::Result<Vec<u8>>;
    fn transformed(&self, id: &str) -> mnistgen_core::Result<Vec<u8>>;
}

/// Renders from a run's pool through its configured pipeline.
pub struct RunImages {
    pool: PoolStore,
    pipeline: Pipeline,
    tagger: LookupTagger,
}

impl RunImages {
    pub fn new(run: &Run) -> mnistgen_core::Result<Self> {
        Ok(Self {
            pool: run.pool()?,
            pipeline: run.config.pipeline.clone(),
            tagger: run.tagger()?,
        })
    }

    fn check(&self, id: &str) -> mnistgen_core::Result<()> {
        if self.pool.images().contains(id) {
            Ok(())
        } else {
            Err(Error::UnknownId(id.to_string()))
        }
    }
}

impl ImageRenderer for RunImages {
    fn raw(&self, id: &str) -> mnistgen_core::Result<Vec<u8>> {
        self.check(id)?;
        self.pool.images().png_bytes(id)
    }

    fn transformed(&self, id: &str) -> mnistgen_core::Result<Vec<u8>> {
        self.check(id)?;
        let (w, h, px) = self.pool.images().get(id)?;
        let ctx = StageContext {
            tagger: Some(&self.tagger),
            matting: None,
        };
        let out = self
            .pipeline
            .apply(&AnnotatedImage::new(id, w, h, 3, px)?, &ctx)?;
        Ok(encode_png(
            &out.pixels,
            out.width,
            out.height,
            out.channels as usize,
        ))
    }
}

pub struct Shared {
    state: Mutex<ReviewState>,
    images: Option<Arc<dyn ImageRenderer>>,
}

impl Shared {
    pub fn new(state: ReviewState, images: Option<Arc<dyn ImageRenderer>>) -> Arc<Self> {
        Arc::new(Self {
            state: Mutex::new(state),
            images,
        })
    }

    /// The state itself, e.g. to save the agent after shutdown.
    pub fn lock(&self) -> MutexGuard<'_, ReviewState> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let (status, code) = match &e {
            Error::UnknownId(_) => (StatusCode::NOT_FOUND, "unknown_id"),
            Error::Conflict(_) => (StatusCode::CONFLICT, "conflict"),
            Error::InvalidOverride { .. } => (StatusCode::BAD_REQUEST, "invalid_override"),
            Error::Precondition(_) | Error::Syntax { .. } | Error::Config(_) => {
                (StatusCode::BAD_REQUEST, "bad_request")
            }
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        Self::new(status, code, e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        Self::new(r.status(), "bad_request", r.body_text())
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

type ApiResult<T> = Result<T, ApiError>;

pub fn router(shared: Arc<Shared>, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/queue", get(queue))
        .route("/api/decision", post(decision))
        .route("/api/stats", get(stats))
        .route("/api/decisions", get(decisions))
        .route("/api/hierarchy", get(hierarchy))
        .route("/api/image/{id}", get(image))
        .route("/api/{*rest}", any(unknown_route))
        .with_state(shared);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Serves on `listener` until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    app: Router,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, app)
        .with_graceful_shutdown(shutdown)
        .await
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Kind {
    Image,
    Cluster,
}

#[derive(Debug, Deserialize)]
struct QueueQuery {
    limit: Option<usize>,
    kind: Option<Kind>,
    #[serde(default = "yes")]
    thumbnails: bool,
}

fn yes() -> bool {
    true
}

async fn queue(
    State(shared): State<Arc<Shared>>,
    Query(q): Query<QueueQuery>,
) -> ApiResult<Json<Vec<QueueItem>>> {
    let limit = q.limit.unwrap_or(DEFAULT_LIMIT).min(MAX_LIMIT);
    let clusters = q.kind.map(|k| matches!(k, Kind::Cluster));
    let batch: Vec<(QueueItem, String)> = {
        let state = shared.lock();
        state
            .next_batch(limit, clusters)
            .into_iter()
            .map(|e| (state.queue_item(e), e.representative().image_id.clone()))
            .collect()
    };
    let Some(images) = shared.images.clone().filter(|_| q.thumbnails) else {
        return Ok(Json(batch.into_iter().map(|(item, _)| item).collect()));
    };
    let items = tokio::task::spawn_blocking(move || {
        let encode = |r: mnistgen_core::Result<Vec<u8>>, id: &str| match r {
            Ok(png) => Some(BASE64.encode(png)),
            Err(e) => {
                log::warn!("thumbnail for {id}: {e}");
                None
            }
        };
        batch
            .into_iter()
            .map(|(mut item, rep)| {
                item.thumbnail = encode(images.raw(&rep), &rep);
                item.transformed = encode(images.transformed(&rep), &rep);
                item
            })
            .collect()
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?;
    Ok(Json(items))
}

async fn decision(
    State(shared): State<Arc<Shared>>,
    body: Result<Json<HumanDecision>, JsonRejection>,
) -> ApiResult<impl IntoResponse> {
    let Json(d) = body?;
    // submit appends to the log and may train the agent, so it runs off the reactor
    let ack = tokio::task::spawn_blocking(move || shared.lock().submit(&d))
        .await
        .map_err(|e| {
            ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())
        })??;
    Ok(Json(ack))
}

async fn stats(State(shared): State<Arc<Shared>>) -> impl IntoResponse {
    Json(shared.lock().stats())
}

#[derive(Debug, Deserialize)]
struct Since {
    #[serde(default)]
    since: usize,
}

async fn decisions(
    State(shared): State<Arc<Shared>>,
    Query(q): Query<Since>,
) -> Json<Vec<DecisionRecord>> {
    let state = shared.lock();
    Json(state.records().get(q.since..).unwrap_or_default().to_vec())
}

async fn hierarchy(State(shared): State<Arc<Shared>>) -> impl IntoResponse {
    Json(shared.lock().hierarchy().clone())
}

#[derive(Debug, Default, Deserialize)]
struct ImageQuery {
    #[serde(default)]
    transformed: bool,
}

fn is_content_id(id: &str) -> bool {
    id.len() == 64 && id.bytes().all(|b| b.is_ascii_hexdigit())
}

async fn image(
    State(shared): State<Arc<Shared>>,
    Path(id): Path<String>,
    Query(q): Query<ImageQuery>,
) -> ApiResult<Response> {
    let images = shared.images.clone().ok_or_else(|| {
        ApiError::new(
            StatusCode::NOT_FOUND,
            "no_images",
            "server runs without an image pool",
        )
    })?;
    if !is_content_id(&id) {
        return Err(Error::UnknownId(id).into());
    }
    let png = tokio::task::spawn_blocking(move || {
        if q.transformed {
            images.transformed(&id)
        } else {
            images.raw(&id)
        }
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

async fn unknown_route() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint")
}
