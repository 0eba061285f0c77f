use std::collections::BTreeMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use dbchat_core::awel::{execute_with, load_dag, AwelError, DagSpec, ExecOptions};
use dbchat_core::Value;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::{blocking, parse_body, ApiError, ApiResult, AppState};

/// A validated workflow kept for later runs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StoredDag {
    pub dag_id: String,
    pub source: String,
    pub dag: DagSpec,
}

#[derive(Deserialize)]
pub(crate) struct NewDag {
    dsl_source: String,
}

#[derive(Deserialize, Default)]
pub(crate) struct RunDag {
    #[serde(default)]
    inputs: BTreeMap<String, serde_json::Value>,
    /// Archive agent messages here; a fresh conversation otherwise.
    #[serde(default)]
    conversation_id: Option<String>,
    #[serde(default)]
    parallel: bool,
}

/// 422 body naming what is wrong with a workflow.
pub(crate) fn awel_error(e: AwelError) -> ApiError {
    let body = match &e {
        AwelError::Syntax { line, col, expected } => {
            json!({ "error": e.to_string(), "kind": "syntax", "line": line, "col": col, "expected": expected })
        }
        AwelError::Invalid(violations) => {
            json!({ "error": e.to_string(), "kind": "invalid", "violations": violations })
        }
        AwelError::MissingInput(node) => {
            return ApiError { status: StatusCode::BAD_REQUEST, body: json!({ "error": e.to_string(), "node": node }) }
        }
        _ => json!({ "error": e.to_string(), "kind": "invalid" }),
    };
    ApiError { status: StatusCode::UNPROCESSABLE_ENTITY, body }
}

/// Plain strings become text; anything else must be a tagged value.
fn input_value(key: &str, v: serde_json::Value) -> ApiResult<Value> {
    match v {
        serde_json::Value::String(s) => Ok(Value::Text(s)),
        other => serde_json::from_value(other).map_err(|e| ApiError::bad_request(format!("input `{key}`: {e}"))),
    }
}

pub(crate) async fn create(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<Response> {
    let req: NewDag = parse_body(&body)?;
    let dag = load_dag(&req.dsl_source).map_err(awel_error)?;
    let mut dags = state.dags.write().unwrap();
    let dag_id = format!("dag-{:04}", dags.len() + 1);
    let body = json!({ "dag_id": dag_id, "name": dag.name, "nodes": dag.nodes.len(), "edges": dag.edges.len() });
    dags.insert(dag_id.clone(), StoredDag { dag_id, source: req.dsl_source, dag });
    Ok((StatusCode::CREATED, Json(body)).into_response())
}

pub(crate) async fn list(State(state): State<Arc<AppState>>) -> Json<serde_json::Value> {
    let dags = state.dags.read().unwrap();
    let list: Vec<_> = dags.values().map(|d| json!({ "dag_id": d.dag_id, "name": d.dag.name })).collect();
    Json(json!({ "dags": list }))
}

fn find(state: &AppState, id: &str) -> ApiResult<StoredDag> {
    state.dags.read().unwrap().get(id).cloned().ok_or_else(|| ApiError::not_found(format!("unknown dag `{id}`")))
}

pub(crate) async fn show(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(find(&state, &id)?).into_response())
}

/// Runs a stored workflow and returns its execution report. Node failures
/// are part of the report, not an error status.
pub(crate) async fn run(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Response> {
    let stored = find(&state, &id)?;
    let req: RunDag = if body.is_empty() { RunDag::default() } else { parse_body(&body)? };
    let inputs = req
        .inputs
        .into_iter()
        .map(|(k, v)| input_value(&k, v).map(|v| (k, v)))
        .collect::<ApiResult<BTreeMap<_, _>>>()?;
    let (conversation_id, report) = blocking(move || {
        let conv = match req.conversation_id {
            Some(c) => {
                state.store.create_named(&c).map_err(ApiError::bad_request)?;
                c
            }
            None => state.store.create_conversation().map_err(ApiError::internal)?,
        };
        let rt = state.runtime.for_conversation(&conv);
        let report =
            execute_with(&stored.dag, &inputs, &rt, ExecOptions { parallel: req.parallel }).map_err(awel_error)?;
        Ok::<_, ApiError>((conv, report))
    })
    .await??;
    Ok(([("x-conversation-id", conversation_id)], Json(report)).into_response())
}
