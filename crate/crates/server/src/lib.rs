//! HTTP front end for the module layer.
//!
//! JSON routes under `/api`, an OpenAI-style `/v1/chat/completions`
//! passthrough, and chat turns streamed as server-sent events. The core is
//! synchronous, so model-bound work runs on the blocking pool.

mod conversations;
mod dags;
mod knowledge;
mod models;

use std::collections::{BTreeMap, HashSet};
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::{Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use dbchat_core::agents::AgentRuntime;
use dbchat_core::rag::KnowledgeSpaces;
use dbchat_core::smmf::Gateway;
use dbchat_core::store::EventStore;
use serde_json::json;
use tower_http::services::ServeDir;

pub use dags::StoredDag;

pub const DEFAULT_MAX_UPLOAD_BYTES: usize = 8 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq)]
pub struct ServerOptions {
    /// When set, `/api` and `/v1` require `Authorization: Bearer <key>`.
    pub api_key: Option<String>,
    /// Static bundle served at `/`.
    pub static_dir: Option<PathBuf>,
    pub max_upload_bytes: usize,
    pub knowledge_max_chars: usize,
    pub knowledge_k: usize,
    /// Space used by conversations that did not pick one.
    pub knowledge_space: Option<String>,
}

impl Default for ServerOptions {
    fn default() -> Self {
        Self {
            api_key: None,
            static_dir: None,
            max_upload_bytes: DEFAULT_MAX_UPLOAD_BYTES,
            knowledge_max_chars: dbchat_core::rag::DEFAULT_MAX_CHARS,
            knowledge_k: 3,
            knowledge_space: None,
        }
    }
}

/// Shared by every request.
pub struct AppState {
    pub store: Arc<EventStore>,
    pub gateway: Arc<Gateway>,
    /// Template runtime; each turn gets a copy bound to its conversation.
    pub runtime: AgentRuntime,
    pub spaces: Arc<KnowledgeSpaces>,
    pub options: ServerOptions,
    dags: RwLock<BTreeMap<String, StoredDag>>,
    active: Mutex<HashSet<String>>,
}

impl AppState {
    pub fn new(
        store: Arc<EventStore>,
        gateway: Arc<Gateway>,
        runtime: AgentRuntime,
        spaces: Arc<KnowledgeSpaces>,
        options: ServerOptions,
    ) -> Arc<Self> {
        Arc::new(Self { store, gateway, runtime, spaces, options, dags: RwLock::default(), active: Mutex::default() })
    }

    /// Marks a conversation busy; false if a run is already in flight.
    fn try_begin(self: &Arc<Self>, conversation_id: &str) -> Option<ActiveRun> {
        let mut active = self.active.lock().unwrap();
        active
            .insert(conversation_id.to_string())
            .then(|| ActiveRun { state: self.clone(), conversation_id: conversation_id.to_string() })
    }
}

/// Clears the conversation's busy mark when dropped.
struct ActiveRun {
    state: Arc<AppState>,
    conversation_id: String,
}

impl Drop for ActiveRun {
    fn drop(&mut self) {
        self.state.active.lock().unwrap().remove(&self.conversation_id);
    }
}

/// Error response with a JSON body `{"error": ...}` plus any extra fields.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: serde_json::Value,
}

impl ApiError {
    pub fn new(status: StatusCode, message: impl std::fmt::Display) -> Self {
        Self { status, body: json!({ "error": message.to_string() }) }
    }

    pub fn bad_request(message: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    pub fn not_found(message: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::NOT_FOUND, message)
    }

    pub fn internal(message: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Parses a JSON body, mapping every failure to 400.
fn parse_body<T: serde::de::DeserializeOwned>(body: &[u8]) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid JSON body: {e}")))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f).await.map_err(ApiError::internal)
}

async fn require_bearer(State(state): State<Arc<AppState>>, req: Request, next: Next) -> Response {
    if let Some(key) = &state.options.api_key {
        let presented = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if presented != Some(key.as_str()) {
            return ApiError::new(StatusCode::UNAUTHORIZED, "missing or wrong bearer token").into_response();
        }
    }
    next.run(req).await
}

pub fn router(state: Arc<AppState>) -> Router {
    let api = Router::new()
        .route("/api/conversations", post(conversations::create).get(conversations::list))
        .route("/api/conversations/{id}", get(conversations::show))
        .route("/api/conversations/{id}/messages", post(conversations::message))
        .merge(knowledge::routes(&state.options))
        .route("/api/dags", post(dags::create).get(dags::list))
        .route("/api/dags/{id}", get(dags::show))
        .route("/api/dags/{id}/run", post(dags::run))
        .route("/api/workers/register", post(models::register))
        .route("/api/workers/{id}/heartbeat", post(models::heartbeat))
        .route("/api/models", get(models::list))
        .route("/v1/chat/completions", post(models::chat_completions))
        .route_layer(middleware::from_fn_with_state(state.clone(), require_bearer));
    let app = api.route("/healthz", get(|| async { Json(json!({ "status": "ok" })) }));
    let app = match &state.options.static_dir {
        Some(dir) => app.fallback_service(ServeDir::new(dir)),
        None => app,
    };
    app.with_state(state)
}

/// Serves until the listener fails.
pub async fn serve(listener: tokio::net::TcpListener, state: Arc<AppState>) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}
