use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Multipart, Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use dbchat_core::rag::{answer_question, hybrid_search, valid_space_name, RagError};
use dbchat_core::Query;
use serde::Deserialize;
use serde_json::json;

use crate::{blocking, parse_body, ApiError, ApiResult, AppState, ServerOptions};

// multipart boundaries and headers on top of the document itself
const ENVELOPE_BYTES: usize = 64 * 1024;

pub(crate) fn routes(options: &ServerOptions) -> Router<Arc<AppState>> {
    Router::new()
        .route("/api/knowledge", get(list))
        .route("/api/knowledge/{space}", get(show))
        .route(
            "/api/knowledge/{space}/documents",
            post(upload).layer(DefaultBodyLimit::max(options.max_upload_bytes + ENVELOPE_BYTES)),
        )
        .route("/api/knowledge/{space}/search", post(search))
        .route("/api/knowledge/{space}/qa", post(qa))
}

fn rag_error(e: RagError) -> ApiError {
    match e {
        RagError::InvalidSpaceName(_) | RagError::InvalidK | RagError::InvalidMaxChars(_) => ApiError::bad_request(e),
        RagError::EmptyKnowledgeBase => ApiError::new(StatusCode::CONFLICT, e),
        RagError::Model(_) | RagError::Embedding(_) => ApiError::new(StatusCode::BAD_GATEWAY, e),
        _ => ApiError::internal(e),
    }
}

fn check_space(space: &str) -> ApiResult<()> {
    if valid_space_name(space) {
        Ok(())
    } else {
        Err(ApiError::bad_request(format!("invalid knowledge space name `{space}`")))
    }
}

async fn list(State(state): State<Arc<AppState>>) -> Json<serde_json::Value> {
    Json(json!({ "spaces": state.spaces.names() }))
}

async fn show(State(state): State<Arc<AppState>>, Path(space): Path<String>) -> ApiResult<Response> {
    check_space(&space)?;
    let kb = state.spaces.space(&space).map_err(rag_error)?;
    let kb = kb.read().unwrap();
    let docs: Vec<&str> = kb.doc_ids().into_iter().collect();
    Ok(Json(json!({ "space": space, "chunks": kb.len(), "documents": docs })).into_response())
}

/// Every file part is one document, keyed by its file name unless a
/// preceding `doc_id` field names it. Re-uploading a document replaces it.
async fn upload(
    State(state): State<Arc<AppState>>,
    Path(space): Path<String>,
    mut form: Multipart,
) -> ApiResult<Response> {
    check_space(&space)?;
    let limit = state.options.max_upload_bytes;
    let mut docs: Vec<(String, String)> = Vec::new();
    let mut next_id: Option<String> = None;
    let mut total = 0usize;
    while let Some(field) = form.next_field().await.map_err(|e| ApiError::new(e.status(), e.body_text()))? {
        let name = field.name().unwrap_or_default().to_string();
        let file_name = field.file_name().map(str::to_string);
        let bytes = field.bytes().await.map_err(|e| ApiError::new(e.status(), e.body_text()))?;
        total += bytes.len();
        if total > limit {
            return Err(ApiError::new(StatusCode::PAYLOAD_TOO_LARGE, format!("upload exceeds {limit} bytes")));
        }
        let text = String::from_utf8(bytes.to_vec()).map_err(|_| ApiError::bad_request("document is not UTF-8"))?;
        if name == "doc_id" {
            next_id = Some(text.trim().to_string());
            continue;
        }
        let doc_id = next_id.take().or(file_name).unwrap_or_else(|| format!("doc{}", docs.len() + 1));
        if doc_id.is_empty() {
            return Err(ApiError::bad_request("empty doc_id"));
        }
        docs.push((doc_id, text));
    }
    if docs.is_empty() {
        return Err(ApiError::bad_request("no document in upload"));
    }
    let max_chars = state.options.knowledge_max_chars;
    let results = blocking(move || {
        docs.into_iter()
            .map(|(doc_id, text)| state.spaces.ingest(&space, &doc_id, &text, max_chars).map(|n| (doc_id, n)))
            .collect::<Result<Vec<_>, _>>()
    })
    .await?
    .map_err(rag_error)?;
    let chunks: usize = results.iter().map(|(_, n)| n).sum();
    let documents: Vec<_> = results.iter().map(|(d, n)| json!({ "doc_id": d, "chunks": n })).collect();
    Ok((StatusCode::OK, Json(json!({ "chunks_indexed": chunks, "documents": documents }))).into_response())
}

#[derive(Deserialize)]
struct SearchBody {
    query: String,
    #[serde(default)]
    k: Option<usize>,
}

async fn search(State(state): State<Arc<AppState>>, Path(space): Path<String>, body: Bytes) -> ApiResult<Response> {
    check_space(&space)?;
    let req: SearchBody = parse_body(&body)?;
    let k = req.k.unwrap_or(state.options.knowledge_k);
    let hits = blocking(move || {
        let kb = state.spaces.space(&space)?;
        let kb = kb.read().unwrap();
        let query = Query::new(req.query, k, kb.encoder_dim())?;
        let hits = hybrid_search(&kb, &query)?;
        Ok::<_, RagError>(
            hits.into_iter()
                .map(|h| {
                    let text = kb.get(&h.chunk_id).map(|c| c.text.clone()).unwrap_or_default();
                    json!({ "hit": h, "text": text })
                })
                .collect::<Vec<_>>(),
        )
    })
    .await?
    .map_err(rag_error)?;
    Ok(Json(json!({ "hits": hits })).into_response())
}

#[derive(Deserialize)]
struct QaBody {
    question: String,
    #[serde(default)]
    k: Option<usize>,
}

async fn qa(State(state): State<Arc<AppState>>, Path(space): Path<String>, body: Bytes) -> ApiResult<Response> {
    check_space(&space)?;
    let req: QaBody = parse_body(&body)?;
    if req.question.trim().is_empty() {
        return Err(ApiError::bad_request("question is empty"));
    }
    let k = req.k.unwrap_or(state.options.knowledge_k);
    let answer = blocking(move || {
        let kb = state.spaces.space(&space)?;
        let kb = kb.read().unwrap();
        answer_question(&kb, &req.question, k, state.gateway.as_ref(), &state.runtime.settings().model)
    })
    .await?
    .map_err(rag_error)?;
    Ok(Json(answer).into_response())
}
