use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::time::Duration;

use thiserror::Error;

use super::wire::{ChatCompletionRequest, ChatCompletionResponse, EmbeddingRequest, EmbeddingResponse};
use super::{count_words, truncate_words, FinishReason, ModelRequest, Usage};
use crate::rag;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    /// The worker could not be reached or answered garbage. Counts against
    /// the worker's health and triggers failover.
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
}

/// Raw completion returned by a backend.
#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub content: String,
    pub finish_reason: FinishReason,
    pub usage: Usage,
}

/// An inference backend behind one registered worker.
pub trait Backend: Send + Sync {
    fn chat(&self, req: &ModelRequest) -> Result<Completion, BackendError>;

    /// Streams content deltas to `on_delta`. The default splits the
    /// non-streamed completion with [`split_deltas`].
    fn chat_stream(&self, req: &ModelRequest, on_delta: &mut dyn FnMut(&str)) -> Result<Completion, BackendError> {
        let completion = self.chat(req)?;
        for delta in split_deltas(&completion.content) {
            on_delta(delta);
        }
        Ok(completion)
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError>;
}

/// Splits text into one delta per word, each carrying the whitespace that
/// precedes it. Trailing whitespace rides on the last delta, so the deltas
/// always concatenate back to the input.
pub fn split_deltas(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut prev_ws = true;
    let mut seen_word = false;
    for (i, ch) in text.char_indices() {
        let ws = ch.is_whitespace();
        if !ws && prev_ws {
            if seen_word {
                // a new word begins; cut before the whitespace run that precedes it
                let cut = text[..i].trim_end().len();
                out.push(&text[start..cut]);
                start = cut;
            }
            seen_word = true;
        }
        prev_ws = ws;
    }
    if start < text.len() {
        out.push(&text[start..]);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MockReply {
    Text(String),
    /// Simulated transport failure with the given message.
    Fail(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScriptError {
    #[error("script is not valid JSON: {0}")]
    Json(String),
    #[error("script must be a JSON object mapping matchers to replies")]
    NotAnObject,
    #[error("reply for matcher `{0}` must be a string or {{\"fail\": string}}")]
    BadReply(String),
}

/// Canned responses keyed by a matcher on the last user message.
///
/// A matcher is either an exact string or `contains:<substring>`. Exact
/// matchers win; otherwise the first `contains:` matcher in file order does.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MockScript {
    exact: Vec<(String, MockReply)>,
    contains: Vec<(String, MockReply)>,
}

impl MockScript {
    pub fn from_json(text: &str) -> Result<Self, ScriptError> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| ScriptError::Json(e.to_string()))?;
        let obj = value.as_object().ok_or(ScriptError::NotAnObject)?;
        let mut script = Self::default();
        for (key, reply) in obj {
            let reply = match reply {
                serde_json::Value::String(s) => MockReply::Text(s.clone()),
                serde_json::Value::Object(o) => match o.get("fail") {
                    Some(serde_json::Value::String(msg)) if o.len() == 1 => MockReply::Fail(msg.clone()),
                    _ => return Err(ScriptError::BadReply(key.clone())),
                },
                _ => return Err(ScriptError::BadReply(key.clone())),
            };
            script.push(key, reply);
        }
        Ok(script)
    }

    /// Adds a matcher, replacing the reply of an identical one in place.
    pub fn push(&mut self, matcher: &str, reply: MockReply) {
        let (list, key) = match matcher.strip_prefix("contains:") {
            Some(needle) => (&mut self.contains, needle),
            None => (&mut self.exact, matcher),
        };
        match list.iter_mut().find(|(m, _)| m == key) {
            Some(slot) => slot.1 = reply,
            None => list.push((key.to_string(), reply)),
        }
    }

    pub fn with(mut self, matcher: &str, reply: &str) -> Self {
        self.push(matcher, MockReply::Text(reply.to_string()));
        self
    }

    pub fn lookup(&self, message: &str) -> Option<&MockReply> {
        self.exact
            .iter()
            .find(|(m, _)| m == message)
            .or_else(|| self.contains.iter().find(|(m, _)| message.contains(m.as_str())))
            .map(|(_, r)| r)
    }

    pub fn len(&self) -> usize {
        self.exact.len() + self.contains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// What the mock answers when no matcher applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MissPolicy {
    /// Empty content.
    #[default]
    Empty,
    /// Echo the last user message back.
    Echo,
}

/// Deterministic in-process backend driven by a [`MockScript`].
#[derive(Debug, Default)]
pub struct MockBackend {
    script: MockScript,
    on_miss: MissPolicy,
    killed: AtomicBool,
    calls: AtomicU64,
}

impl MockBackend {
    pub fn new(script: MockScript) -> Self {
        Self { script, ..Self::default() }
    }

    pub fn echo() -> Self {
        Self { on_miss: MissPolicy::Echo, ..Self::default() }
    }

    pub fn with_miss_policy(mut self, policy: MissPolicy) -> Self {
        self.on_miss = policy;
        self
    }

    /// Makes every subsequent call fail at the transport level.
    pub fn kill(&self) {
        self.killed.store(true, Ordering::SeqCst);
    }

    pub fn revive(&self) {
        self.killed.store(false, Ordering::SeqCst);
    }

    /// Chat calls served, including failed ones.
    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    fn check_alive(&self) -> Result<(), BackendError> {
        if self.killed.load(Ordering::SeqCst) {
            Err(BackendError::Transport("mock worker is down".into()))
        } else {
            Ok(())
        }
    }
}

impl Backend for MockBackend {
    fn chat(&self, req: &ModelRequest) -> Result<Completion, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.check_alive()?;
        let last = req.last_user_message().unwrap_or_default();
        let raw = match self.script.lookup(last) {
            Some(MockReply::Text(t)) => t.clone(),
            Some(MockReply::Fail(msg)) => return Err(BackendError::Transport(msg.clone())),
            None => match self.on_miss {
                MissPolicy::Empty => String::new(),
                MissPolicy::Echo => last.to_string(),
            },
        };
        let (content, truncated) = truncate_words(&raw, req.max_tokens);
        let prompt_tokens = req.messages.iter().map(|m| count_words(&m.content)).sum();
        Ok(Completion {
            content: content.to_string(),
            finish_reason: if truncated { FinishReason::Length } else { FinishReason::Stop },
            usage: Usage { prompt_tokens, completion_tokens: count_words(content) },
        })
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError> {
        self.check_alive()?;
        Ok(texts.iter().map(|t| rag::embed::<f64>(t, rag::DEFAULT_DIM)).collect())
    }
}

/// Worker reached over an OpenAI-compatible HTTP API.
pub struct RemoteBackend {
    base_url: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl std::fmt::Debug for RemoteBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteBackend").field("base_url", &self.base_url).finish_non_exhaustive()
    }
}

impl RemoteBackend {
    pub fn new(base_url: impl Into<String>, api_key: Option<String>) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(120)))
            .http_status_as_error(true)
            .build();
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key,
            agent: ureq::Agent::new_with_config(config),
        }
    }

    fn post<T: serde::Serialize, R: serde::de::DeserializeOwned>(
        &self,
        path: &str,
        body: &T,
    ) -> Result<R, BackendError> {
        let url = format!("{}{}", self.base_url, path);
        let mut req = self.agent.post(&url);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(body).map_err(|e| BackendError::Transport(e.to_string()))?;
        resp.body_mut().read_json().map_err(|e| BackendError::Transport(e.to_string()))
    }
}

impl Backend for RemoteBackend {
    fn chat(&self, req: &ModelRequest) -> Result<Completion, BackendError> {
        let mut wire = ChatCompletionRequest::from(req);
        wire.stream = Some(false);
        let resp: ChatCompletionResponse = self.post("/v1/chat/completions", &wire)?;
        let choice =
            resp.choices.into_iter().next().ok_or_else(|| BackendError::Transport("response has no choices".into()))?;
        let finish_reason = match choice.finish_reason.as_deref() {
            Some("length") => FinishReason::Length,
            Some("stop") | None => FinishReason::Stop,
            Some(_) => FinishReason::Error,
        };
        Ok(Completion {
            content: choice.message.content,
            finish_reason,
            usage: resp.usage.map(Into::into).unwrap_or_default(),
        })
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError> {
        let body = EmbeddingRequest { model: String::new(), input: texts.to_vec() };
        let resp: EmbeddingResponse = self.post("/v1/embeddings", &body)?;
        let mut data = resp.data;
        data.sort_by_key(|d| d.index);
        Ok(data.into_iter().map(|d| d.embedding).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::smmf::ChatMessage;

    #[test]
    fn deltas_concatenate_to_input() {
        assert_eq!(split_deltas("hello big world"), vec!["hello", " big", " world"]);
        assert_eq!(split_deltas("  a\n b "), vec!["  a", "\n b "]);
        assert!(split_deltas("").is_empty());
        assert_eq!(split_deltas("   "), vec!["   "]);
        for s in ["x", "a  b\tc\n", " lead", "ünï côdé"] {
            assert_eq!(split_deltas(s).concat(), s);
        }
    }

    #[test]
    fn script_parsing_and_precedence() {
        let script = MockScript::from_json(
            r#"{"contains:hi": "generic", "hi": "exact", "contains:h": "later", "boom": {"fail": "down"}}"#,
        )
        .unwrap();
        assert_eq!(script.lookup("hi"), Some(&MockReply::Text("exact".into())));
        assert_eq!(script.lookup("oh hi"), Some(&MockReply::Text("generic".into())));
        assert_eq!(script.lookup("ah"), Some(&MockReply::Text("later".into())));
        assert_eq!(script.lookup("boom"), Some(&MockReply::Fail("down".into())));
        assert_eq!(script.lookup("zzz"), None);
        assert!(matches!(MockScript::from_json("[]"), Err(ScriptError::NotAnObject)));
        assert!(matches!(MockScript::from_json(r#"{"a": 1}"#), Err(ScriptError::BadReply(_))));
        assert!(matches!(MockScript::from_json("{"), Err(ScriptError::Json(_))));
    }

    #[test]
    fn mock_counts_words_and_truncates() {
        let backend = MockBackend::new(MockScript::default().with("hi", "one two three"));
        let mut req = ModelRequest::new("m", vec![ChatMessage::user("hi")]);
        let c = backend.chat(&req).unwrap();
        assert_eq!(c.content, "one two three");
        assert_eq!(c.finish_reason, FinishReason::Stop);
        assert_eq!(c.usage, Usage { prompt_tokens: 1, completion_tokens: 3 });
        req.max_tokens = 2;
        let c = backend.chat(&req).unwrap();
        assert_eq!(c.content, "one two");
        assert_eq!(c.finish_reason, FinishReason::Length);
        req.max_tokens = 3;
        assert_eq!(backend.chat(&req).unwrap().finish_reason, FinishReason::Stop);
    }

    #[test]
    fn miss_policies() {
        let req = ModelRequest::new("m", vec![ChatMessage::user("ping")]);
        assert_eq!(MockBackend::default().chat(&req).unwrap().content, "");
        assert_eq!(MockBackend::echo().chat(&req).unwrap().content, "ping");
    }

    #[test]
    fn killed_mock_fails_transport() {
        let backend = MockBackend::echo();
        backend.kill();
        let req = ModelRequest::new("m", vec![ChatMessage::user("ping")]);
        assert!(matches!(backend.chat(&req), Err(BackendError::Transport(_))));
        backend.revive();
        assert!(backend.chat(&req).is_ok());
        assert_eq!(backend.calls(), 2);
    }
}
