//! HTTP/JSON façade over the review queue.
//!
//! Every mutation goes through [`ReviewQueue::decide`], so the queue files
//! remain the single source of truth; reads refresh from disk first so
//! decisions appended by other processes show up.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use agentsim_core::validation::api::{ApiError, DecisionRequest, ItemDetail, ItemSummary, REVIEWER_HEADER};
use agentsim_core::validation::{QueueStats, ReviewItem, ReviewQueue, ReviewStatus, ValidationError};
use agentsim_core::Corpus;
use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, HeaderName, Method, StatusCode};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use tokio::net::TcpListener;
use tower_http::cors::{Any, CorsLayer};
use tower_http::services::{ServeDir, ServeFile};

pub use agentsim_core::validation::api::DEFAULT_PORT;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("port {port} is already in use; pass --port to choose another")]
    PortInUse { port: u16 },
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Queue(#[from] ValidationError),
    #[error("server error: {0}")]
    Serve(#[from] std::io::Error),
}

pub struct AppState {
    queue: Mutex<ReviewQueue>,
    corpus: Option<Arc<Corpus>>,
}

impl AppState {
    pub fn new(queue: ReviewQueue, corpus: Option<Arc<Corpus>>) -> Arc<Self> {
        Arc::new(Self {
            queue: Mutex::new(queue),
            corpus,
        })
    }

    /// Opens (creating if needed) the queue under `queue_dir`.
    pub fn open(queue_dir: impl Into<PathBuf>, corpus: Option<Arc<Corpus>>) -> Result<Arc<Self>, ServiceError> {
        Ok(Self::new(ReviewQueue::open(queue_dir)?, corpus))
    }

    fn with_queue<T>(&self, f: impl FnOnce(&mut ReviewQueue) -> Result<T, ValidationError>) -> Result<T, ApiFailure> {
        let mut q = self.queue.lock().unwrap_or_else(|p| p.into_inner());
        f(&mut q).map_err(ApiFailure::from)
    }
}

struct ApiFailure {
    status: StatusCode,
    body: ApiError,
}

impl ApiFailure {
    fn new(status: StatusCode, error: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            body: ApiError {
                error: error.into(),
                message: message.into(),
            },
        }
    }
}

impl From<ValidationError> for ApiFailure {
    fn from(e: ValidationError) -> Self {
        let (status, kind) = match &e {
            ValidationError::UnknownItem(_) => (StatusCode::NOT_FOUND, "unknown_item"),
            ValidationError::AlreadyDecided { .. } => (StatusCode::CONFLICT, "already_decided"),
            ValidationError::StaleItem { .. } => (StatusCode::CONFLICT, "stale_item"),
            ValidationError::InvalidDecision(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_decision"),
            ValidationError::Corrupt(_) => (StatusCode::INTERNAL_SERVER_ERROR, "corrupt_queue"),
            ValidationError::Persistence { .. } => (StatusCode::INTERNAL_SERVER_ERROR, "persistence"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        Self::new(status, kind, e.to_string())
    }
}

impl IntoResponse for ApiFailure {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

#[derive(Debug, Deserialize)]
struct ListParams {
    status: Option<String>,
    limit: Option<usize>,
}

async fn list_items(
    State(state): State<Arc<AppState>>,
    Query(params): Query<ListParams>,
) -> Result<Json<Vec<ItemSummary>>, ApiFailure> {
    let status = match params.status.as_deref().unwrap_or("pending") {
        "pending" => Some(ReviewStatus::Pending),
        "decided" => Some(ReviewStatus::Decided),
        "all" => None,
        other => {
            return Err(ApiFailure::new(
                StatusCode::BAD_REQUEST,
                "invalid_status",
                format!("status must be pending, decided or all, got `{other}`"),
            ))
        }
    };
    let limit = params.limit.unwrap_or(usize::MAX);
    state.with_queue(|q| {
        q.refresh()?;
        Ok(Json(q.list(status).into_iter().take(limit).map(ItemSummary::from).collect()))
    })
}

async fn get_item(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<ItemDetail>, ApiFailure> {
    let item = state.with_queue(|q| {
        q.refresh()?;
        q.get(&id).cloned().ok_or(ValidationError::UnknownItem(id.clone()))
    })?;
    Ok(Json(ItemDetail::build(item, state.corpus.as_deref())))
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

async fn post_decision(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Json<ReviewItem>, ApiFailure> {
    let reviewer = headers
        .get(REVIEWER_HEADER)
        .and_then(|v| v.to_str().ok())
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .ok_or_else(|| {
            ApiFailure::new(StatusCode::BAD_REQUEST, "missing_reviewer", format!("{REVIEWER_HEADER} header is required"))
        })?
        .to_string();
    let request: DecisionRequest = serde_json::from_slice(&body)
        .map_err(|e| ApiFailure::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_body", e.to_string()))?;
    let expected = request.expected_version;
    let decision = request.into_decision(&reviewer, now_ms());
    let item = state.with_queue(|q| q.decide(&id, decision, expected))?;
    tracing::info!(item = %id, reviewer = %reviewer, "decision recorded");
    Ok(Json(item))
}

async fn stats(State(state): State<Arc<AppState>>) -> Result<Json<QueueStats>, ApiFailure> {
    state.with_queue(|q| {
        q.refresh()?;
        Ok(Json(q.stats()))
    })
}

async fn docs() -> Html<&'static str> {
    Html(include_str!("api_docs.html"))
}

async fn placeholder_index() -> Html<&'static str> {
    Html(
        "<!doctype html><title>agentsim review</title><p>The review UI is not installed. \
         Start the service with a built UI directory, or use the <a href=\"/api/docs\">API</a> directly.</p>",
    )
}

/// Routes under `/api`, plus the UI at `/` when `ui_dir` holds a build.
pub fn router(state: Arc<AppState>, ui_dir: Option<PathBuf>) -> Router {
    let cors = CorsLayer::new()
        .allow_origin(Any)
        .allow_methods([Method::GET, Method::POST, Method::OPTIONS])
        .allow_headers([
            axum::http::header::CONTENT_TYPE,
            HeaderName::from_static("x-reviewer-id"),
        ]);
    let api = Router::new()
        .route("/api/review/items", get(list_items))
        .route("/api/review/items/{id}", get(get_item))
        .route("/api/review/items/{id}/decision", post(post_decision))
        .route("/api/review/stats", get(stats))
        .route("/api/docs", get(docs))
        .with_state(state);
    let app = match ui_dir {
        Some(dir) => {
            let index = dir.join("index.html");
            api.fallback_service(ServeDir::new(dir).fallback(ServeFile::new(index)))
        }
        None => api.route("/", get(placeholder_index)),
    };
    app.layer(cors)
}

/// Binds `addr`, turning an occupied port into [`ServiceError::PortInUse`].
pub async fn bind(addr: SocketAddr) -> Result<TcpListener, ServiceError> {
    TcpListener::bind(addr).await.map_err(|source| {
        if source.kind() == std::io::ErrorKind::AddrInUse {
            ServiceError::PortInUse { port: addr.port() }
        } else {
            ServiceError::Bind { addr, source }
        }
    })
}

/// Serves until ctrl-c.
pub async fn serve(listener: TcpListener, app: Router) -> Result<(), ServiceError> {
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
