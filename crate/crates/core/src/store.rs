//! Append-only conversation logs.
//!
//! Each conversation is one JSON-lines file under `<root>/conversations/`,
//! one `{seq, ts, type, payload}` object per line. `index.json` next to the
//! logs is a cache rebuilt from them by [`EventStore::list_conversations`].

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value as Json;
use thiserror::Error;

use crate::smmf::{Clock, SystemClock};

/// Longest conversation title, in characters.
pub const TITLE_MAX_CHARS: usize = 80;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StoreError {
    #[error("storage error: {0}")]
    Storage(String),
    #[error("unknown conversation `{0}`")]
    UnknownConversation(String),
    #[error("invalid conversation id `{0}`")]
    InvalidId(String),
}

fn io_err(e: impl std::fmt::Display) -> StoreError {
    StoreError::Storage(e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventType {
    UserMessage,
    Plan,
    AgentRequest,
    AgentResponse,
    Chart,
    Final,
    Error,
}

impl EventType {
    /// Events that carry an archived agent message and consume a turn.
    pub fn is_agent_message(self) -> bool {
        matches!(self, Self::Plan | Self::AgentRequest | Self::AgentResponse)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::UserMessage => "user_message",
            Self::Plan => "plan",
            Self::AgentRequest => "agent_request",
            Self::AgentResponse => "agent_response",
            Self::Chart => "chart",
            Self::Final => "final",
            Self::Error => "error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    pub ts: DateTime<Utc>,
    #[serde(rename = "type")]
    pub event_type: EventType,
    pub payload: Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConversationIndex {
    pub conversation_id: String,
    pub title: String,
    pub created_at: DateTime<Utc>,
    pub event_count: u64,
}

/// Result of reading one log.
#[derive(Debug, Clone, PartialEq)]
pub struct EventLog {
    pub events: Vec<Event>,
    /// A partial last line was found and ignored.
    pub torn_tail: bool,
}

/// Position assigned to an appended event.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Appended {
    pub seq: u64,
    /// Agent-message turn, for plan/agent_request/agent_response events.
    pub turn: Option<u64>,
    pub ts: DateTime<Utc>,
}

struct Log {
    file: File,
    next_seq: u64,
    next_turn: u64,
}

pub fn valid_conversation_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 128 && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}

pub struct EventStore {
    dir: PathBuf,
    clock: Arc<dyn Clock>,
    logs: Mutex<HashMap<String, Arc<Mutex<Log>>>>,
}

impl std::fmt::Debug for EventStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EventStore").field("dir", &self.dir).finish_non_exhaustive()
    }
}

impl EventStore {
    /// Opens the store rooted at `data_dir`; logs live in `data_dir/conversations`.
    pub fn open(data_dir: impl AsRef<Path>) -> Result<Self, StoreError> {
        Self::with_clock(data_dir, Arc::new(SystemClock))
    }

    pub fn with_clock(data_dir: impl AsRef<Path>, clock: Arc<dyn Clock>) -> Result<Self, StoreError> {
        let dir = data_dir.as_ref().join("conversations");
        fs::create_dir_all(&dir).map_err(io_err)?;
        Ok(Self { dir, clock, logs: Mutex::default() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn log_path(&self, conversation_id: &str) -> PathBuf {
        self.dir.join(format!("{conversation_id}.jsonl"))
    }

    pub fn exists(&self, conversation_id: &str) -> bool {
        valid_conversation_id(conversation_id)
            && (self.logs.lock().unwrap().contains_key(conversation_id) || self.log_path(conversation_id).is_file())
    }

    /// Creates an empty conversation with a fresh id.
    pub fn create_conversation(&self) -> Result<String, StoreError> {
        let id = uuid::Uuid::new_v4().simple().to_string();
        self.create_named(&id)?;
        Ok(id)
    }

    /// Creates (or opens) a conversation with a caller-chosen id.
    pub fn create_named(&self, conversation_id: &str) -> Result<(), StoreError> {
        self.log(conversation_id, true).map(|_| ())
    }

    fn log(&self, id: &str, create: bool) -> Result<Arc<Mutex<Log>>, StoreError> {
        if !valid_conversation_id(id) {
            return Err(StoreError::InvalidId(id.to_string()));
        }
        let mut logs = self.logs.lock().unwrap();
        if let Some(log) = logs.get(id) {
            return Ok(log.clone());
        }
        let path = self.log_path(id);
        if !create && !path.is_file() {
            return Err(StoreError::UnknownConversation(id.to_string()));
        }
        let mut file =
            OpenOptions::new().read(true).write(true).create(true).truncate(false).open(&path).map_err(io_err)?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes).map_err(io_err)?;
        let (events, valid_len) = parse_log(&bytes);
        if valid_len < bytes.len() {
            // drop the torn tail so the next append starts on a clean line
            log::warn!("conversation {id}: dropping {} torn byte(s)", bytes.len() - valid_len);
            file.set_len(valid_len as u64).map_err(io_err)?;
        }
        file.seek(SeekFrom::End(0)).map_err(io_err)?;
        let next_seq = events.last().map_or(1, |e| e.seq + 1);
        let next_turn = 1 + events.iter().filter(|e| e.event_type.is_agent_message()).count() as u64;
        let log = Arc::new(Mutex::new(Log { file, next_seq, next_turn }));
        logs.insert(id.to_string(), log.clone());
        Ok(log)
    }

    /// Appends one event, creating the conversation if needed. The line is
    /// flushed and synced before returning.
    pub fn append_event(&self, conversation_id: &str, event_type: EventType, payload: Json) -> Result<u64, StoreError> {
        self.append_with(conversation_id, event_type, |_| payload).map(|a| a.seq)
    }

    /// Appends an event whose payload depends on its assigned turn. Seq and
    /// turn are taken under the conversation's lock.
    pub fn append_with(
        &self,
        conversation_id: &str,
        event_type: EventType,
        build: impl FnOnce(Option<u64>) -> Json,
    ) -> Result<Appended, StoreError> {
        let log = self.log(conversation_id, true)?;
        let mut log = log.lock().unwrap();
        let turn = event_type.is_agent_message().then_some(log.next_turn);
        let event = Event { seq: log.next_seq, ts: self.clock.now(), event_type, payload: build(turn) };
        let mut line = serde_json::to_vec(&event).map_err(io_err)?;
        line.push(b'\n');
        log.file.write_all(&line).map_err(io_err)?;
        log.file.flush().map_err(io_err)?;
        log.file.sync_data().map_err(io_err)?;
        log.next_seq += 1;
        if turn.is_some() {
            log.next_turn += 1;
        }
        Ok(Appended { seq: event.seq, turn, ts: event.ts })
    }

    pub fn load_events(&self, conversation_id: &str) -> Result<EventLog, StoreError> {
        if !valid_conversation_id(conversation_id) {
            return Err(StoreError::InvalidId(conversation_id.to_string()));
        }
        // hold the append lock so a reader sees whole lines only
        let open = self.logs.lock().unwrap().get(conversation_id).cloned();
        let _guard = open.as_ref().map(|l| l.lock().unwrap());
        let bytes = match fs::read(self.log_path(conversation_id)) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(StoreError::UnknownConversation(conversation_id.to_string()))
            }
            Err(e) => return Err(io_err(e)),
        };
        let (events, valid_len) = parse_log(&bytes);
        let torn_tail = valid_len < bytes.len();
        if torn_tail {
            log::warn!("conversation {conversation_id}: torn final line ignored");
        }
        Ok(EventLog { events, torn_tail })
    }

    /// All conversations, newest first. Rewrites `index.json`.
    pub fn list_conversations(&self) -> Result<Vec<ConversationIndex>, StoreError> {
        let mut out = Vec::new();
        for entry in fs::read_dir(&self.dir).map_err(io_err)? {
            let path = entry.map_err(io_err)?.path();
            let Some(id) = path.file_name().and_then(|n| n.to_str()).and_then(|n| n.strip_suffix(".jsonl")) else {
                continue;
            };
            if !valid_conversation_id(id) {
                continue;
            }
            let log = self.load_events(id)?;
            let created_at = log.events.first().map_or_else(|| self.clock.now(), |e| e.ts);
            let title = log
                .events
                .iter()
                .find(|e| e.event_type == EventType::UserMessage)
                .and_then(|e| e.payload.get("text").and_then(Json::as_str))
                .map(|t| t.chars().take(TITLE_MAX_CHARS).collect())
                .unwrap_or_default();
            out.push(ConversationIndex {
                conversation_id: id.to_string(),
                title,
                created_at,
                event_count: log.events.len() as u64,
            });
        }
        out.sort_by(|a, b| b.created_at.cmp(&a.created_at).then_with(|| a.conversation_id.cmp(&b.conversation_id)));
        let index = serde_json::to_vec_pretty(&out).map_err(io_err)?;
        let tmp = self.dir.join("index.json.tmp");
        fs::write(&tmp, index).map_err(io_err)?;
        fs::rename(&tmp, self.dir.join("index.json")).map_err(io_err)?;
        Ok(out)
    }
}

/// Parses complete lines; returns the events and the byte length they span.
/// Parsing stops at the first line that is unterminated or not an event.
fn parse_log(bytes: &[u8]) -> (Vec<Event>, usize) {
    let mut events = Vec::new();
    let mut offset = 0;
    while offset < bytes.len() {
        let Some(nl) = bytes[offset..].iter().position(|b| *b == b'\n') else { break };
        let line = &bytes[offset..offset + nl];
        if line.iter().all(u8::is_ascii_whitespace) {
            offset += nl + 1;
            continue;
        }
        match serde_json::from_slice::<Event>(line) {
            Ok(e) => events.push(e),
            Err(_) => break,
        }
        offset += nl + 1;
    }
    (events, offset)
}

/// Log bytes with every timestamp replaced by a fixed string, for
/// run-to-run comparisons.
pub fn normalize_timestamps(log: &str) -> String {
    let mut out = String::with_capacity(log.len());
    for line in log.lines() {
        match serde_json::from_str::<Json>(line) {
            Ok(Json::Object(mut obj)) if obj.contains_key("ts") => {
                obj.insert("ts".into(), Json::String("<ts>".into()));
                out.push_str(&Json::Object(obj).to_string());
            }
            _ => out.push_str(line),
        }
        out.push('\n');
    }
    out
}
