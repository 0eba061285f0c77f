use std::collections::HashMap;
use std::sync::Mutex;

use chrono::Utc;
use serde::{Deserialize, Serialize};

use super::{AgentError, AgentMessage, TaskPlan};
use crate::store::{EventStore, EventType, StoreError};
use crate::value::Value;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    #[default]
    Plan,
    Request,
    Response,
}

impl MessageKind {
    pub fn event_type(self) -> EventType {
        match self {
            Self::Plan => EventType::Plan,
            Self::Request => EventType::AgentRequest,
            Self::Response => EventType::AgentResponse,
        }
    }

    pub fn from_event_type(t: EventType) -> Option<Self> {
        match t {
            EventType::Plan => Some(Self::Plan),
            EventType::AgentRequest => Some(Self::Request),
            EventType::AgentResponse => Some(Self::Response),
            _ => None,
        }
    }
}

/// Append-only record of agent messages. Turn numbers are assigned by the
/// archive, atomically per conversation.
pub trait Archive: Send + Sync {
    fn append(
        &self,
        conversation_id: &str,
        kind: MessageKind,
        sender: &str,
        receiver: &str,
        content: Value,
    ) -> Result<AgentMessage, AgentError>;

    /// Messages in archival order.
    fn history(&self, conversation_id: &str) -> Result<Vec<AgentMessage>, AgentError>;
}

/// Archive kept in memory, for tests and throwaway runs.
#[derive(Debug, Default)]
pub struct MemoryArchive {
    conversations: Mutex<HashMap<String, Vec<AgentMessage>>>,
}

impl MemoryArchive {
    pub fn create(&self, conversation_id: &str) {
        self.conversations.lock().unwrap().entry(conversation_id.to_string()).or_default();
    }

    pub fn len(&self, conversation_id: &str) -> usize {
        self.conversations.lock().unwrap().get(conversation_id).map_or(0, Vec::len)
    }
}

impl Archive for MemoryArchive {
    fn append(
        &self,
        conversation_id: &str,
        kind: MessageKind,
        sender: &str,
        receiver: &str,
        content: Value,
    ) -> Result<AgentMessage, AgentError> {
        let mut convs = self.conversations.lock().unwrap();
        let log = convs.entry(conversation_id.to_string()).or_default();
        let turn = log.len() as u64 + 1;
        let msg = AgentMessage {
            id: AgentMessage::id_for_turn(turn),
            conversation_id: conversation_id.to_string(),
            kind,
            sender: sender.to_string(),
            receiver: receiver.to_string(),
            content,
            turn,
            created_at: Utc::now(),
        };
        log.push(msg.clone());
        Ok(msg)
    }

    fn history(&self, conversation_id: &str) -> Result<Vec<AgentMessage>, AgentError> {
        self.conversations
            .lock()
            .unwrap()
            .get(conversation_id)
            .cloned()
            .ok_or_else(|| AgentError::UnknownConversation(conversation_id.to_string()))
    }
}

fn store_err(e: StoreError) -> AgentError {
    match e {
        StoreError::UnknownConversation(id) => AgentError::UnknownConversation(id),
        other => AgentError::Archive(other.to_string()),
    }
}

impl Archive for EventStore {
    fn append(
        &self,
        conversation_id: &str,
        kind: MessageKind,
        sender: &str,
        receiver: &str,
        content: Value,
    ) -> Result<AgentMessage, AgentError> {
        let mut msg = AgentMessage {
            id: String::new(),
            conversation_id: conversation_id.to_string(),
            kind,
            sender: sender.to_string(),
            receiver: receiver.to_string(),
            content,
            turn: 0,
            created_at: Utc::now(),
        };
        let mut encode_err = None;
        let appended = self
            .append_with(conversation_id, kind.event_type(), |turn| {
                let turn = turn.expect("agent message events carry a turn");
                msg.turn = turn;
                msg.id = AgentMessage::id_for_turn(turn);
                serde_json::to_value(&msg).unwrap_or_else(|e| {
                    encode_err = Some(e.to_string());
                    serde_json::Value::Null
                })
            })
            .map_err(store_err)?;
        if let Some(e) = encode_err {
            return Err(AgentError::Archive(e));
        }
        msg.created_at = appended.ts;
        Ok(msg)
    }

    fn history(&self, conversation_id: &str) -> Result<Vec<AgentMessage>, AgentError> {
        let log = self.load_events(conversation_id).map_err(store_err)?;
        let mut out = Vec::new();
        for event in log.events {
            let Some(kind) = MessageKind::from_event_type(event.event_type) else { continue };
            let mut msg: AgentMessage = serde_json::from_value(event.payload)
                .map_err(|e| AgentError::Archive(format!("event {}: {e}", event.seq)))?;
            msg.conversation_id = conversation_id.to_string();
            msg.kind = kind;
            msg.created_at = event.ts;
            out.push(msg);
        }
        Ok(out)
    }
}

/// Archived messages of a conversation in ascending turn order.
pub fn replay_history(conversation_id: &str, archive: &dyn Archive) -> Result<Vec<AgentMessage>, AgentError> {
    let mut messages = archive.history(conversation_id)?;
    messages.sort_by_key(|m| m.turn);
    Ok(messages)
}

/// A finished run rebuilt from the archive.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayedRun {
    pub plan: TaskPlan,
    /// Step outputs in execution order, as returned by the live run.
    pub outputs: Vec<Value>,
}

/// Rebuilds every run of a conversation from its archived messages. Each
/// plan message opens a run; the responses that follow are its outputs.
pub fn replay_runs(conversation_id: &str, archive: &dyn Archive) -> Result<Vec<ReplayedRun>, AgentError> {
    let mut runs: Vec<ReplayedRun> = Vec::new();
    for msg in replay_history(conversation_id, archive)? {
        match (msg.kind, msg.content) {
            (MessageKind::Plan, Value::Plan(plan)) => runs.push(ReplayedRun { plan, outputs: Vec::new() }),
            (MessageKind::Response, content) => {
                if let Some(run) = runs.last_mut() {
                    run.outputs.push(content);
                }
            }
            _ => {}
        }
    }
    Ok(runs)
}
