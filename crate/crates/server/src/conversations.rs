use std::convert::Infallible;
use std::sync::Arc;

use axum::body::{Body, Bytes};
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::Json;
use dbchat_core::agents::{AgentRuntime, CancelToken};
use dbchat_core::rag::valid_space_name;
use dbchat_core::session::run_turn;
use dbchat_core::store::{EventType, StoreError};
use serde::Deserialize;
use serde_json::json;
use tokio::sync::mpsc;

use crate::{blocking, parse_body, ApiError, ApiResult, AppState};

#[derive(Deserialize)]
pub(crate) struct NewConversation {
    first_message: String,
    #[serde(default)]
    knowledge_space: Option<String>,
}

#[derive(Deserialize)]
pub(crate) struct NewMessage {
    text: String,
}

fn store_error(e: StoreError) -> ApiError {
    match e {
        StoreError::UnknownConversation(_) | StoreError::InvalidId(_) => ApiError::not_found(e),
        StoreError::Storage(_) => ApiError::internal(e),
    }
}

pub(crate) async fn create(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<Response> {
    let req: NewConversation = parse_body(&body)?;
    if req.first_message.trim().is_empty() {
        return Err(ApiError::bad_request("first_message is empty"));
    }
    if let Some(space) = &req.knowledge_space {
        if !valid_space_name(space) {
            return Err(ApiError::bad_request(format!("invalid knowledge space name `{space}`")));
        }
    }
    let id = blocking(move || {
        let id = state.store.create_conversation()?;
        let mut payload = json!({ "text": req.first_message });
        if let Some(space) = req.knowledge_space {
            payload["knowledge_space"] = json!(space);
        }
        state.store.append_event(&id, EventType::UserMessage, payload)?;
        Ok::<_, StoreError>(id)
    })
    .await?
    .map_err(store_error)?;
    Ok((StatusCode::CREATED, Json(json!({ "conversation_id": id }))).into_response())
}

pub(crate) async fn list(State(state): State<Arc<AppState>>) -> ApiResult<Response> {
    let list = blocking(move || state.store.list_conversations()).await?.map_err(store_error)?;
    Ok(Json(json!({ "conversations": list })).into_response())
}

/// The archived events of one conversation, in order.
pub(crate) async fn show(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    let conv = id.clone();
    let log = blocking(move || state.store.load_events(&conv)).await?.map_err(store_error)?;
    Ok(Json(json!({ "conversation_id": id, "events": log.events, "torn_tail": log.torn_tail })).into_response())
}

/// Runtime for one turn: bound to the conversation and, when one was
/// chosen, to its knowledge space.
fn turn_runtime(state: &AppState, conversation_id: &str) -> Result<AgentRuntime, ApiError> {
    let log = state.store.load_events(conversation_id).map_err(store_error)?;
    let space = log
        .events
        .iter()
        .find_map(|e| e.payload.get("knowledge_space").and_then(|s| s.as_str()).map(str::to_string))
        .or_else(|| state.options.knowledge_space.clone());
    let mut rt = state.runtime.for_conversation(conversation_id);
    if let Some(space) = space {
        let kb = state.spaces.space(&space).map_err(ApiError::internal)?;
        rt = rt.with_knowledge(kb);
    }
    Ok(rt)
}

/// Cancels the run when the response body is dropped, which is how a
/// client disconnect shows up.
struct CancelOnDrop(CancelToken);

impl Drop for CancelOnDrop {
    fn drop(&mut self) {
        self.0.cancel();
    }
}

pub(crate) async fn message(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Response> {
    let req: NewMessage = parse_body(&body)?;
    if !state.store.exists(&id) {
        return Err(ApiError::not_found(format!("unknown conversation `{id}`")));
    }
    if req.text.trim().is_empty() {
        return Err(ApiError::bad_request("text is empty"));
    }
    let Some(active) = state.try_begin(&id) else {
        return Err(ApiError::new(StatusCode::CONFLICT, "a run is already in progress for this conversation"));
    };
    let st = state.clone();
    let conv = id.clone();
    let rt = blocking(move || turn_runtime(&st, &conv)).await??;
    let token = CancelToken::new();
    let rt = rt.with_cancel(token.clone());

    let (tx, rx) = mpsc::unbounded_channel::<String>();
    tokio::task::spawn_blocking(move || {
        let _active = active;
        let result = run_turn(&state.store, &rt, &req.text, &mut |event| {
            let _ = tx.send(event.to_sse());
        });
        if let Err(e) = result {
            log::error!("conversation {id}: {e}");
        }
    });
    let frames = futures::stream::unfold((rx, CancelOnDrop(token)), |(mut rx, guard)| async move {
        rx.recv().await.map(|frame| (Ok::<_, Infallible>(frame), (rx, guard)))
    });
    Ok(([(header::CONTENT_TYPE, "text/event-stream"), (header::CACHE_CONTROL, "no-cache")], Body::from_stream(frames))
        .into_response())
}
