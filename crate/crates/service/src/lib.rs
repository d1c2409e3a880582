//! Review service: labeling queues, illegible adjudication, marking queries
//! and crops over one catalog directory.

use std::future::IntoFuture;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use tokio::net::TcpListener;
use tokio::sync::RwLock;
use tower_http::services::ServeDir;

use tuskmarks::analysis;
use tuskmarks::annotate::crop::{crop_file, encode_png, resolve, rotate};
use tuskmarks::annotate::CropError;
use tuskmarks::catalog::{Catalog, CatalogError, QueueName, Rotation, SeizureId};
use tuskmarks::config::PipelineConfig;
use tuskmarks::review::api::{
    CropQuery, ErrorBody, ErrorDetail, Health, MarkingQuery, QueueItem, QueueQuery, SearchQuery, SkipRequest,
};
use tuskmarks::review::{self, LabelSubmission, ReviewError};

/// Decision timestamps come from here. Setting `TUSKMARKS_FIXED_CLOCK` to an
/// RFC 3339 instant pins them, which makes runs reproducible.
#[derive(Debug, Clone, Copy)]
pub enum Clock {
    System,
    Fixed(DateTime<Utc>),
}

pub const FIXED_CLOCK_ENV: &str = "TUSKMARKS_FIXED_CLOCK";

impl Clock {
    pub fn from_env() -> Result<Self, String> {
        match std::env::var(FIXED_CLOCK_ENV) {
            Ok(v) => DateTime::parse_from_rfc3339(&v)
                .map(|t| Clock::Fixed(t.with_timezone(&Utc)))
                .map_err(|e| format!("{FIXED_CLOCK_ENV}={v:?}: {e}")),
            Err(_) => Ok(Clock::System),
        }
    }

    pub fn now(self) -> DateTime<Utc> {
        match self {
            Clock::System => Utc::now(),
            Clock::Fixed(t) => t,
        }
    }
}

pub struct AppState {
    catalog: RwLock<Catalog>,
    images: PathBuf,
    clock: Clock,
}

impl AppState {
    pub fn new(catalog: Catalog, images: impl Into<PathBuf>, clock: Clock) -> Arc<Self> {
        Arc::new(Self {
            catalog: RwLock::new(catalog),
            images: images.into(),
            clock,
        })
    }

    /// Opens the catalog and image root named by the configuration.
    pub fn from_config(cfg: &PipelineConfig, clock: Clock) -> Result<Arc<Self>, CatalogError> {
        let catalog = Catalog::open(cfg.resolve(&cfg.paths.catalog))?;
        Ok(Self::new(catalog, cfg.resolve(&cfg.paths.images), clock))
    }

    pub async fn into_catalog(self: Arc<Self>) -> Option<Catalog> {
        Arc::into_inner(self).map(|s| s.catalog.into_inner())
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

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            error: ErrorDetail {
                code: self.code.to_string(),
                message: self.message,
            },
        };
        (self.status, Json(body)).into_response()
    }
}

fn catalog_status(e: &CatalogError) -> (StatusCode, &'static str) {
    match e {
        CatalogError::UnknownMarking(_) | CatalogError::UnknownImage(_) => (StatusCode::NOT_FOUND, "not_found"),
        _ => (StatusCode::INTERNAL_SERVER_ERROR, "catalog"),
    }
}

impl From<CatalogError> for ApiError {
    fn from(e: CatalogError) -> Self {
        let (status, code) = catalog_status(&e);
        Self::new(status, code, e.to_string())
    }
}

impl From<ReviewError> for ApiError {
    fn from(e: ReviewError) -> Self {
        let (status, code) = match &e {
            ReviewError::UnknownTask(_) => (StatusCode::NOT_FOUND, "unknown_task"),
            ReviewError::TaskClosed { .. } => (StatusCode::CONFLICT, "task_closed"),
            ReviewError::InvalidLabel { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_label"),
            ReviewError::MissingText(_) => (StatusCode::UNPROCESSABLE_ENTITY, "missing_text"),
            ReviewError::MissingReviewer => (StatusCode::UNPROCESSABLE_ENTITY, "missing_reviewer"),
            ReviewError::Catalog(c) => catalog_status(c),
        };
        Self::new(status, code, e.to_string())
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn queue_name(name: &str) -> ApiResult<QueueName> {
    QueueName::parse(name).ok_or_else(|| {
        ApiError::new(
            StatusCode::NOT_FOUND,
            "unknown_queue",
            format!("unknown queue {name:?}; expected initial_labeling, illegible_review or conflict_review"),
        )
    })
}

fn seizure(s: Option<u32>) -> ApiResult<Option<SeizureId>> {
    s.map(|n| SeizureId::new(n).ok_or_else(|| ApiError::bad_request(format!("invalid seizure {n}"))))
        .transpose()
}

async fn health(State(state): State<Arc<AppState>>) -> Json<Health> {
    let c = state.catalog.read().await;
    Json(Health {
        status: "ok".into(),
        images: c.images().count(),
        markings: c.markings().count(),
        open_tasks: QueueName::ALL
            .into_iter()
            .map(|q| (q.as_str().to_string(), review::open_count(&c, q)))
            .collect(),
    })
}

async fn queue(
    State(state): State<Arc<AppState>>,
    Path(name): Path<String>,
    Query(q): Query<QueueQuery>,
) -> ApiResult<Json<Vec<QueueItem>>> {
    let queue = queue_name(&name)?;
    let seizure = seizure(q.seizure)?;
    let c = state.catalog.read().await;
    let items = review::open_tasks(&c, queue, seizure, q.limit)
        .into_iter()
        .filter_map(|t| {
            Some(QueueItem {
                task: t.clone(),
                marking: c.marking(&t.marking_id)?.clone(),
            })
        })
        .collect();
    Ok(Json(items))
}

/// The catalog is saved before the response is sent. A failed save reloads
/// the last durable state so memory never runs ahead of disk.
async fn persist(c: &mut Catalog) -> ApiResult<()> {
    if let Err(e) = c.save() {
        tracing::error!(error = %e, "catalog save failed");
        if let Some(root) = c.root().map(PathBuf::from) {
            if let Ok(reloaded) = Catalog::open(root) {
                *c = reloaded;
            }
        }
        return Err(e.into());
    }
    Ok(())
}

async fn submit(
    State(state): State<Arc<AppState>>,
    Json(sub): Json<LabelSubmission>,
) -> ApiResult<Json<tuskmarks::catalog::ReviewTask>> {
    let mut c = state.catalog.write().await;
    let task = review::submit_label(&mut c, &sub, state.clock.now())?;
    persist(&mut c).await?;
    tracing::info!(task = %task.task_id, label = ?task.assigned_label, "label recorded");
    Ok(Json(task))
}

async fn skip(
    State(state): State<Arc<AppState>>,
    Path(task_id): Path<String>,
    Json(req): Json<SkipRequest>,
) -> ApiResult<Json<tuskmarks::catalog::ReviewTask>> {
    let mut c = state.catalog.write().await;
    let task = review::skip_task(&mut c, &task_id, &req.reviewer, state.clock.now())?;
    persist(&mut c).await?;
    Ok(Json(task))
}

async fn vocabulary(State(state): State<Arc<AppState>>) -> Json<review::Vocabulary> {
    Json(review::vocabulary(&*state.catalog.read().await))
}

async fn markings(
    State(state): State<Arc<AppState>>,
    Query(q): Query<MarkingQuery>,
) -> ApiResult<Json<Vec<tuskmarks::catalog::Marking>>> {
    let filter = q.filter().map_err(ApiError::bad_request)?;
    let c = state.catalog.read().await;
    let mut out: Vec<_> = c.query(&filter).into_iter().cloned().collect();
    out.truncate(q.limit.unwrap_or(usize::MAX));
    Ok(Json(out))
}

async fn marking(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> ApiResult<Json<tuskmarks::catalog::Marking>> {
    let c = state.catalog.read().await;
    let m = c.marking(&id).ok_or(CatalogError::UnknownMarking(id))?;
    Ok(Json(m.clone()))
}

/// PNG of the marking's box, rotated clockwise by `rotation` (default: the
/// rotation recorded during annotation).
async fn crop(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<CropQuery>,
) -> ApiResult<Response> {
    let (marking, uri) = {
        let c = state.catalog.read().await;
        let m = c.marking(&id).ok_or_else(|| CatalogError::UnknownMarking(id.clone()))?.clone();
        let uri = c
            .image(&m.image_id)
            .ok_or_else(|| CatalogError::UnknownImage(m.image_id.clone()))?
            .uri
            .clone();
        (m, uri)
    };
    let rotation = match q.rotation {
        Some(d) => Rotation::from_degrees(d)
            .ok_or_else(|| ApiError::bad_request(format!("rotation must be 0, 90, 180 or 270, got {d}")))?,
        None => marking.rotation,
    };
    let path = resolve(&state.images, &uri);
    let png = tokio::task::spawn_blocking(move || crop_file(&path, &marking).map(|img| encode_png(&rotate(&img, rotation))))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
        .map_err(|e| match e {
            CropError::MissingImage { .. } => ApiError::new(StatusCode::NOT_FOUND, "image_missing", e.to_string()),
            CropError::UnknownImage(_) => ApiError::new(StatusCode::NOT_FOUND, "not_found", e.to_string()),
            CropError::Decode { .. } => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "image_unreadable", e.to_string()),
        })?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

async fn search_descriptions(
    State(state): State<Arc<AppState>>,
    Query(q): Query<SearchQuery>,
) -> Json<Vec<analysis::SearchHit>> {
    Json(analysis::search_descriptions(&*state.catalog.read().await, &q.q))
}

async fn signatures(State(state): State<Arc<AppState>>) -> Json<Vec<analysis::SignatureGroup>> {
    let c = state.catalog.read().await;
    Json(analysis::build_signature_index(&c, &analysis::AnalysisConfig::default()))
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint")
}

/// All API routes, plus the review UI bundle from `static_dir` when given.
pub fn router(state: Arc<AppState>, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/health", get(health))
        .route("/queue/{name}", get(queue))
        .route("/labels", post(submit))
        .route("/tasks/{task_id}/skip", post(skip))
        .route("/vocabulary", get(vocabulary))
        .route("/markings", get(markings))
        .route("/markings/{id}", get(marking))
        .route("/markings/{id}/crop", get(crop))
        .route("/search", get(search_descriptions))
        .route("/signatures", get(signatures))
        .fallback(not_found)
        .with_state(state);
    let app = Router::new().nest("/api", api);
    match static_dir {
        Some(dir) => app.fallback_service(ServeDir::new(dir)),
        None => app,
    }
}

/// A server bound to a listener. Dropping the handle does not stop it; call
/// [`Server::shutdown`].
pub struct Server {
    pub addr: SocketAddr,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    task: tokio::task::JoinHandle<std::io::Result<()>>,
}

impl Server {
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub async fn shutdown(mut self) -> std::io::Result<()> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        self.task.await.map_err(std::io::Error::other)?
    }

    /// Serves until the process is interrupted.
    pub async fn wait(self) -> std::io::Result<()> {
        self.task.await.map_err(std::io::Error::other)?
    }
}

pub async fn serve_on(listener: TcpListener, app: Router) -> std::io::Result<Server> {
    let addr = listener.local_addr()?;
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    let fut = axum::serve(listener, app)
        .with_graceful_shutdown(async move {
            let _ = rx.await;
        })
        .into_future();
    let task = tokio::spawn(fut);
    tracing::info!(%addr, "review service listening");
    Ok(Server {
        addr,
        shutdown: Some(tx),
        task,
    })
}
