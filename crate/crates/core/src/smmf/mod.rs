//! Multi-model management: a controller registry of model workers, inference
//! backends (scripted mock and remote HTTP), and a gateway that routes
//! chat-completion and embedding traffic with round-robin selection and
//! health-based failover.

mod backend;
mod gateway;
mod registry;
pub mod wire;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use backend::{
    split_deltas, Backend, BackendError, Completion, MissPolicy, MockBackend, MockReply, MockScript, RemoteBackend,
    ScriptError,
};
pub use gateway::Gateway;
pub use registry::{
    Capability, Clock, ManualClock, Registry, RegistryError, SystemClock, WorkerRecord, WorkerSpec, WorkerStatus,
    DEFAULT_FAILURE_THRESHOLD, DEFAULT_TTL_SECS,
};

/// Endpoint value that selects the in-process scripted backend.
pub const MOCK_ENDPOINT: &str = "internal:mock";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into() }
    }
}

/// A chat-completion request as seen by the gateway.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default)]
    pub stream: bool,
}

impl ModelRequest {
    pub fn new(model: impl Into<String>, messages: Vec<ChatMessage>) -> Self {
        Self { model: model.into(), messages, temperature: 0.0, max_tokens: 1024, stream: false }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let last =
            self.messages.last().ok_or_else(|| ModelError::InvalidRequest("messages must not be empty".into()))?;
        if last.role == Role::Assistant {
            return Err(ModelError::InvalidRequest("last message must come from user or system".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(ModelError::InvalidRequest(format!("temperature {} outside [0, 2]", self.temperature)));
        }
        if self.max_tokens == 0 {
            return Err(ModelError::InvalidRequest("max_tokens must be positive".into()));
        }
        Ok(())
    }

    /// Content of the final user message, which the mock script matches on.
    pub fn last_user_message(&self) -> Option<&str> {
        self.messages.iter().rev().find(|m| m.role == Role::User).map(|m| m.content.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u32,
    pub completion_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelResponse {
    pub content: String,
    pub model: String,
    pub finish_reason: FinishReason,
    pub usage: Usage,
    /// Worker that served the request.
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub worker_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("no worker available for model `{0}`")]
    NoWorkerAvailable(String),
    #[error("all workers failed for model `{model}` after {attempts} attempt(s)")]
    AllWorkersFailed { model: String, attempts: usize },
    #[error("invalid model request: {0}")]
    InvalidRequest(String),
    #[error("backend error: {0}")]
    Backend(String),
    #[error("request cancelled")]
    Cancelled,
}

/// Anything that can answer a chat-completion request.
///
/// The gateway is the production implementation; agents and the data chat
/// operations only see this trait.
pub trait ModelClient: Send + Sync {
    fn complete(&self, req: &ModelRequest) -> Result<ModelResponse, ModelError>;
}

/// Whitespace-delimited word count, the token unit used by the mock backend.
pub fn count_words(text: &str) -> u32 {
    text.split_whitespace().count() as u32
}

/// Cuts `content` after its `max_words`-th word, preserving original spacing.
/// Returns the (possibly shortened) text and whether it was cut.
pub fn truncate_words(content: &str, max_words: u32) -> (&str, bool) {
    let mut seen = 0u32;
    let mut in_word = false;
    for (i, ch) in content.char_indices() {
        if ch.is_whitespace() {
            if in_word {
                in_word = false;
                if seen == max_words {
                    if content[i..].split_whitespace().next().is_some() {
                        return (&content[..i], true);
                    }
                    return (content, false);
                }
            }
        } else if !in_word {
            in_word = true;
            seen += 1;
        }
    }
    (content, false)
}
