//! JSON shapes of the de-facto `/v1/chat/completions` protocol.

use serde::{Deserialize, Serialize};

use super::{ChatMessage, FinishReason, ModelRequest, ModelResponse, Usage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatCompletionRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stream: Option<bool>,
}

impl From<&ModelRequest> for ChatCompletionRequest {
    fn from(req: &ModelRequest) -> Self {
        Self {
            model: req.model.clone(),
            messages: req.messages.clone(),
            temperature: Some(req.temperature),
            max_tokens: Some(req.max_tokens),
            stream: Some(req.stream),
        }
    }
}

impl ChatCompletionRequest {
    /// Fills unset sampling fields from the given defaults.
    pub fn into_model_request(self, default_temperature: f64, default_max_tokens: u32) -> ModelRequest {
        ModelRequest {
            model: self.model,
            messages: self.messages,
            temperature: self.temperature.unwrap_or(default_temperature),
            max_tokens: self.max_tokens.unwrap_or(default_max_tokens),
            stream: self.stream.unwrap_or(false),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireUsage {
    pub prompt_tokens: u32,
    pub completion_tokens: u32,
    #[serde(default)]
    pub total_tokens: u32,
}

impl From<WireUsage> for Usage {
    fn from(u: WireUsage) -> Self {
        Usage { prompt_tokens: u.prompt_tokens, completion_tokens: u.completion_tokens }
    }
}

impl From<Usage> for WireUsage {
    fn from(u: Usage) -> Self {
        WireUsage {
            prompt_tokens: u.prompt_tokens,
            completion_tokens: u.completion_tokens,
            total_tokens: u.prompt_tokens + u.completion_tokens,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Choice {
    pub index: u32,
    pub message: ChatMessage,
    #[serde(default)]
    pub finish_reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatCompletionResponse {
    #[serde(default)]
    pub id: String,
    #[serde(default)]
    pub object: String,
    #[serde(default)]
    pub created: i64,
    #[serde(default)]
    pub model: String,
    pub choices: Vec<Choice>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<WireUsage>,
}

pub fn finish_reason_str(reason: FinishReason) -> &'static str {
    match reason {
        FinishReason::Stop => "stop",
        FinishReason::Length => "length",
        FinishReason::Error => "error",
    }
}

impl ChatCompletionResponse {
    pub fn from_response(id: impl Into<String>, created: i64, resp: &ModelResponse) -> Self {
        Self {
            id: id.into(),
            object: "chat.completion".into(),
            created,
            model: resp.model.clone(),
            choices: vec![Choice {
                index: 0,
                message: ChatMessage::assistant(resp.content.clone()),
                finish_reason: Some(finish_reason_str(resp.finish_reason).into()),
            }],
            usage: Some(resp.usage.into()),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Delta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkChoice {
    pub index: u32,
    pub delta: Delta,
    pub finish_reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatCompletionChunk {
    pub id: String,
    pub object: String,
    pub created: i64,
    pub model: String,
    pub choices: Vec<ChunkChoice>,
}

impl ChatCompletionChunk {
    pub fn delta(id: &str, created: i64, model: &str, content: &str) -> Self {
        Self::new(id, created, model, Delta { role: None, content: Some(content.into()) }, None)
    }

    pub fn finish(id: &str, created: i64, model: &str, reason: FinishReason) -> Self {
        Self::new(id, created, model, Delta::default(), Some(finish_reason_str(reason).into()))
    }

    fn new(id: &str, created: i64, model: &str, delta: Delta, finish: Option<String>) -> Self {
        Self {
            id: id.into(),
            object: "chat.completion.chunk".into(),
            created,
            model: model.into(),
            choices: vec![ChunkChoice { index: 0, delta, finish_reason: finish }],
        }
    }

    /// One SSE frame: `data: <json>\n\n`.
    pub fn to_sse(&self) -> String {
        format!("data: {}\n\n", serde_json::to_string(self).expect("chunk serializes"))
    }
}

/// Stream terminator frame.
pub const SSE_DONE: &str = "data: [DONE]\n\n";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRequest {
    #[serde(default)]
    pub model: String,
    pub input: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingData {
    pub index: usize,
    pub embedding: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingResponse {
    pub data: Vec<EmbeddingData>,
}
