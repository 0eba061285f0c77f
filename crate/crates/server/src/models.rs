use std::convert::Infallible;
use std::sync::Arc;

use axum::body::{Body, Bytes};
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::Json;
use dbchat_core::smmf::wire::{ChatCompletionChunk, ChatCompletionRequest, ChatCompletionResponse};
use dbchat_core::smmf::{ModelError, ModelResponse, RegistryError, WorkerSpec};
use serde::Deserialize;
use serde_json::json;
use tokio::sync::mpsc;

use crate::{blocking, parse_body, ApiError, ApiResult, AppState};

#[derive(Deserialize)]
pub(crate) struct Registration {
    #[serde(flatten)]
    spec: WorkerSpec,
    /// Bearer token the gateway presents to a remote worker.
    #[serde(default)]
    api_key: Option<String>,
}

fn registry_error(e: RegistryError) -> ApiError {
    match e {
        RegistryError::UnknownWorker(_) => ApiError::not_found(e),
        _ => ApiError::bad_request(e),
    }
}

pub(crate) fn model_error(e: ModelError) -> ApiError {
    let status = match e {
        ModelError::InvalidRequest(_) => StatusCode::BAD_REQUEST,
        ModelError::NoWorkerAvailable(_) | ModelError::Cancelled => StatusCode::SERVICE_UNAVAILABLE,
        ModelError::AllWorkersFailed { .. } | ModelError::Backend(_) => StatusCode::BAD_GATEWAY,
    };
    ApiError::new(status, e)
}

pub(crate) async fn register(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<Response> {
    let req: Registration = parse_body(&body)?;
    let id = state.gateway.register_endpoint(req.spec, req.api_key).map_err(registry_error)?;
    Ok((StatusCode::CREATED, Json(json!({ "worker_id": id }))).into_response())
}

pub(crate) async fn heartbeat(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    state.gateway.registry().heartbeat(&id).map_err(registry_error)?;
    let status = state.gateway.registry().get(&id).map(|w| w.status);
    Ok(Json(json!({ "worker_id": id, "status": status })).into_response())
}

/// Models with their workers and how many of them are healthy.
pub(crate) async fn list(State(state): State<Arc<AppState>>) -> Json<serde_json::Value> {
    let models: Vec<_> = state
        .gateway
        .registry()
        .models()
        .into_iter()
        .map(|(name, workers)| {
            let healthy = workers.iter().filter(|w| w.status == dbchat_core::smmf::WorkerStatus::Healthy).count();
            json!({ "model": name, "healthy_workers": healthy, "workers": workers })
        })
        .collect();
    Json(json!({ "models": models }))
}

fn completion_id() -> (String, i64) {
    let now = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).unwrap_or_default();
    (format!("chatcmpl-{}", now.as_nanos()), now.as_secs() as i64)
}

enum Piece {
    Delta(String),
    Done(Result<ModelResponse, ModelError>),
}

/// OpenAI-compatible chat completion routed through the gateway. With
/// `stream: true` the reply is `data:` chunks ending in `data: [DONE]`.
pub(crate) async fn chat_completions(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<Response> {
    let wire: ChatCompletionRequest = parse_body(&body)?;
    let defaults = state.runtime.settings();
    let req = wire.into_model_request(defaults.temperature, defaults.max_tokens);
    let (id, created) = completion_id();
    if !req.stream {
        let resp = blocking(move || state.gateway.chat_completion(&req)).await?.map_err(model_error)?;
        return Ok(Json(ChatCompletionResponse::from_response(id, created, &resp)).into_response());
    }

    let (tx, mut rx) = mpsc::unbounded_channel::<Piece>();
    let model = req.model.clone();
    tokio::task::spawn_blocking(move || {
        let result = state.gateway.chat_completion_stream(&req, &mut |d| {
            let _ = tx.send(Piece::Delta(d.to_string()));
        });
        let _ = tx.send(Piece::Done(result));
    });
    // an error before the first delta still gets a proper status code
    let first = rx.recv().await.ok_or_else(|| ApiError::internal("stream ended early"))?;
    if let Piece::Done(Err(e)) = first {
        return Err(model_error(e));
    }
    let frame = move |piece: Piece| match piece {
        Piece::Delta(d) => ChatCompletionChunk::delta(&id, created, &model, &d).to_sse(),
        Piece::Done(Ok(resp)) => {
            format!(
                "{}data: [DONE]\n\n",
                ChatCompletionChunk::finish(&id, created, &model, resp.finish_reason).to_sse()
            )
        }
        Piece::Done(Err(e)) => {
            format!("data: {}\n\ndata: [DONE]\n\n", json!({ "error": { "message": e.to_string() } }))
        }
    };
    let frames = futures::stream::unfold((Some(first), rx, frame), |(first, mut rx, frame)| async move {
        let piece = match first {
            Some(p) => p,
            None => rx.recv().await?,
        };
        Some((Ok::<_, Infallible>(frame(piece)), (None, rx, frame)))
    });
    Ok(([(header::CONTENT_TYPE, "text/event-stream"), (header::CACHE_CONTROL, "no-cache")], Body::from_stream(frames))
        .into_response())
}
