//! HTTP review service over a [`CorrectionQueue`].
//!
//! All state changes go through the queue, so the service itself is stateless
//! and racing reviewers are resolved by the queue's compare-and-set.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tower_http::services::ServeDir;
use usersod_core::dataset::{image_to_png_bytes, mask_to_png_bytes};
use usersod_core::BoundingBox;
use usersod_digger::{CorrectionDecision, CorrectionQueue, ProposedSample, QueueError, QueueStats, Status};

pub const DEFAULT_PAGE_SIZE: usize = 20;
pub const MAX_PAGE_SIZE: usize = 500;

const PLACEHOLDER_UI: &str = include_str!("../static/index.html");

#[derive(Debug, Error)]
pub enum ApiError {
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Internal(String),
}

impl ApiError {
    pub fn status(&self) -> StatusCode {
        match self {
            ApiError::NotFound(_) => StatusCode::NOT_FOUND,
            ApiError::Conflict(_) => StatusCode::CONFLICT,
            ApiError::Invalid(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl From<QueueError> for ApiError {
    fn from(e: QueueError) -> Self {
        let msg = e.to_string();
        match e {
            QueueError::NotFound(_) => ApiError::NotFound(msg),
            QueueError::AlreadyDecided { .. } => ApiError::Conflict(msg),
            QueueError::Invalid(_) => ApiError::Invalid(msg),
            QueueError::Storage(_) => ApiError::Internal(msg),
        }
    }
}

#[derive(Serialize)]
struct ErrorBody {
    error: String,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if let ApiError::Internal(msg) = &self {
            log::error!("review service: {msg}");
        }
        (self.status(), Json(ErrorBody { error: self.to_string() })).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Queue listing entry; the mask and image are fetched separately.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleSummary {
    pub id: String,
    pub scene_id: u32,
    pub index: u32,
    pub label: String,
    pub confidence: f64,
    pub bbox: BoundingBox,
    pub commands: Vec<String>,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl From<&ProposedSample> for SampleSummary {
    fn from(p: &ProposedSample) -> Self {
        SampleSummary {
            id: p.id.clone(),
            scene_id: p.scene_id,
            index: p.index,
            label: p.detected.label.clone(),
            confidence: p.detected.confidence,
            bbox: p.detected.bbox,
            commands: p.commands.clone(),
            status: p.status,
            note: p.note.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueuePage {
    pub page: usize,
    pub page_size: usize,
    pub total: usize,
    pub items: Vec<SampleSummary>,
}

/// A proposal with its scene image inlined as base64 PNG.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleDetail {
    #[serde(flatten)]
    pub sample: ProposedSample,
    pub image_png_base64: String,
}

#[derive(Debug, Default, Deserialize)]
struct QueueQuery {
    page: Option<usize>,
    page_size: Option<usize>,
    /// A status name or `all`; pending by default.
    status: Option<String>,
}

fn parse_status(s: Option<&str>) -> ApiResult<Option<Status>> {
    match s.unwrap_or("pending") {
        "all" => Ok(None),
        "pending" => Ok(Some(Status::Pending)),
        "accepted" => Ok(Some(Status::Accepted)),
        "edited" => Ok(Some(Status::Edited)),
        "rejected" => Ok(Some(Status::Rejected)),
        other => Err(ApiError::Invalid(format!("unknown status filter `{other}`"))),
    }
}

type Shared = Arc<CorrectionQueue>;

async fn list_queue(
    State(q): State<Shared>,
    query: Result<Query<QueueQuery>, QueryRejection>,
) -> ApiResult<Json<QueuePage>> {
    let Query(query) = query.map_err(|e| ApiError::Invalid(e.body_text()))?;
    let page = query.page.unwrap_or(1);
    let page_size = query.page_size.unwrap_or(DEFAULT_PAGE_SIZE);
    if page == 0 || page_size == 0 || page_size > MAX_PAGE_SIZE {
        return Err(ApiError::Invalid(format!(
            "page must be >= 1 and page_size in 1..={MAX_PAGE_SIZE}"
        )));
    }
    let status = parse_status(query.status.as_deref())?;
    let p = q.page(page, page_size, status);
    Ok(Json(QueuePage {
        page: p.page,
        page_size: p.page_size,
        total: p.total,
        items: p.items.iter().map(SampleSummary::from).collect(),
    }))
}

fn find(q: &CorrectionQueue, id: &str) -> ApiResult<ProposedSample> {
    q.get(id).ok_or_else(|| ApiError::NotFound(format!("no proposal `{id}`")))
}

fn scene_png(q: &CorrectionQueue, p: &ProposedSample) -> ApiResult<Vec<u8>> {
    let image = q
        .image(p.scene_id)
        .ok_or_else(|| ApiError::Internal(format!("image of scene {} is missing", p.scene_id)))?;
    Ok(image_to_png_bytes(&image))
}

fn png(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "image/png")], bytes).into_response()
}

async fn get_sample(State(q): State<Shared>, Path(id): Path<String>) -> ApiResult<Json<SampleDetail>> {
    let sample = find(&q, &id)?;
    let image_png_base64 = STANDARD.encode(scene_png(&q, &sample)?);
    Ok(Json(SampleDetail {
        sample,
        image_png_base64,
    }))
}

async fn get_image(State(q): State<Shared>, Path(id): Path<String>) -> ApiResult<Response> {
    let sample = find(&q, &id)?;
    Ok(png(scene_png(&q, &sample)?))
}

async fn get_mask(State(q): State<Shared>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(png(mask_to_png_bytes(&find(&q, &id)?.mask)))
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// The body mirrors [`CorrectionDecision`]; `proposed_ref` may be omitted and
/// defaults to the id in the path.
fn parse_decision(id: &str, mut body: serde_json::Value) -> ApiResult<CorrectionDecision> {
    let obj = body
        .as_object_mut()
        .ok_or_else(|| ApiError::Invalid("decision must be a JSON object".into()))?;
    match obj.get("proposed_ref") {
        None | Some(serde_json::Value::Null) => {
            obj.insert("proposed_ref".into(), id.into());
        }
        Some(r) if r.as_str() == Some(id) => {}
        Some(r) => return Err(ApiError::Invalid(format!("proposed_ref {r} does not match `{id}`"))),
    }
    let mut decision: CorrectionDecision =
        serde_json::from_value(body).map_err(|e| ApiError::Invalid(format!("bad decision: {e}")))?;
    if decision.reviewer.trim().is_empty() {
        return Err(ApiError::Invalid("reviewer must be named".into()));
    }
    if decision.timestamp == 0 {
        decision.timestamp = now_ms();
    }
    Ok(decision)
}

async fn post_decision(
    State(q): State<Shared>,
    Path(id): Path<String>,
    body: Result<Json<serde_json::Value>, JsonRejection>,
) -> ApiResult<Json<SampleSummary>> {
    let Json(body) = body.map_err(|e| ApiError::Invalid(e.body_text()))?;
    let decision = parse_decision(&id, body)?;
    if q.get(&id).is_none() {
        return Err(ApiError::NotFound(format!("no proposal `{id}`")));
    }
    let updated = tokio::task::spawn_blocking(move || q.decide(decision))
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))??;
    log::info!("{} -> {:?}", updated.id, updated.status);
    Ok(Json(SampleSummary::from(&updated)))
}

async fn get_stats(State(q): State<Shared>) -> Json<QueueStats> {
    Json(q.stats())
}

async fn placeholder_ui() -> Html<&'static str> {
    Html(PLACEHOLDER_UI)
}

/// Routes over `queue`; a built review UI is served from `ui_dir` when given.
pub fn router(queue: Arc<CorrectionQueue>, ui_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/queue", get(list_queue))
        .route("/api/samples/{id}", get(get_sample))
        .route("/api/samples/{id}/image.png", get(get_image))
        .route("/api/samples/{id}/mask.png", get(get_mask))
        .route("/api/samples/{id}/decision", post(post_decision))
        .route("/api/stats", get(get_stats))
        .with_state(queue);
    match ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.route("/", get(placeholder_ui)),
    }
}

/// Serve until ctrl-c on a dedicated runtime.
pub fn serve_blocking(addr: SocketAddr, queue: Arc<CorrectionQueue>, ui_dir: Option<PathBuf>) -> std::io::Result<()> {
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        log::info!("review service on http://{}", listener.local_addr()?);
        axum::serve(listener, router(queue, ui_dir))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
    })
}
