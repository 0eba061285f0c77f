//! One chat turn: archive the user's message, run the goal, and turn agent
//! progress into the event stream clients consume.

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::agents::{run_goal_with, AgentRuntime, PlanStep, RunEvent, TaskPlan, AGGREGATOR_ROLE};
use crate::datachat::ChartSpec;
use crate::store::{EventStore, EventType, StoreError};
use crate::value::Value;

/// A client-facing progress event. Every stream ends with exactly one `Done`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", content = "data", rename_all = "snake_case")]
pub enum StreamEvent {
    Plan(TaskPlan),
    StepStart(PlanStep),
    StepResult {
        step: u32,
        value: Value,
    },
    Chart(ChartSpec),
    Delta {
        text: String,
    },
    Final {
        text: String,
    },
    Error {
        message: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        step: Option<u32>,
    },
    Done {},
}

impl StreamEvent {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Plan(_) => "plan",
            Self::StepStart(_) => "step_start",
            Self::StepResult { .. } => "step_result",
            Self::Chart(_) => "chart",
            Self::Delta { .. } => "delta",
            Self::Final { .. } => "final",
            Self::Error { .. } => "error",
            Self::Done {} => "done",
        }
    }

    /// The JSON carried in the `data:` line.
    pub fn data(&self) -> serde_json::Value {
        match serde_json::to_value(self).expect("event serializes") {
            serde_json::Value::Object(mut o) => o.remove("data").unwrap_or(json!({})),
            _ => json!({}),
        }
    }

    /// `event: <name>\ndata: <one-line JSON>\n\n`
    pub fn to_sse(&self) -> String {
        format!("event: {}\ndata: {}\n\n", self.name(), self.data())
    }

    pub fn from_parts(name: &str, data: serde_json::Value) -> Result<Self, serde_json::Error> {
        serde_json::from_value(json!({ "event": name, "data": data }))
    }

    /// Store event type for events that are archived; progress-only events
    /// return `None`. Plans are archived by the agents themselves.
    fn archived_as(&self) -> Option<EventType> {
        match self {
            Self::Chart(_) => Some(EventType::Chart),
            Self::Final { .. } => Some(EventType::Final),
            Self::Error { .. } => Some(EventType::Error),
            _ => None,
        }
    }
}

/// What a finished turn produced.
#[derive(Debug, Clone, PartialEq)]
pub struct TurnOutcome {
    /// Step outputs; empty when the run failed before any step.
    pub outputs: Vec<Value>,
    pub events: Vec<StreamEvent>,
}

/// Runs `text` as a goal in `rt`'s conversation. Events reach `emit` as
/// they happen; chart, final and error events are also appended to the
/// store. A failed run yields an error event rather than an `Err`; only
/// storage failures are returned as errors.
///
/// The user message is archived first, unless the log already ends with the
/// same unanswered message (a conversation opened with its first message).
pub fn run_turn(
    store: &EventStore,
    rt: &AgentRuntime,
    text: &str,
    emit: &mut dyn FnMut(&StreamEvent),
) -> Result<TurnOutcome, StoreError> {
    let conv = rt.conversation_id().to_string();
    if !is_pending(store, &conv, text) {
        store.append_event(&conv, EventType::UserMessage, json!({ "text": text }))?;
    }

    let mut events = Vec::new();
    let mut storage_error = None;
    let mut push = |event: StreamEvent, events: &mut Vec<StreamEvent>| {
        if storage_error.is_none() {
            if let Some(t) = event.archived_as() {
                if let Err(e) = store.append_event(&conv, t, event.data()) {
                    storage_error = Some(e);
                }
            }
        }
        emit(&event);
        events.push(event);
    };

    let result = run_goal_with(text, rt, &mut |e| {
        let event = match e {
            RunEvent::Plan { plan } => StreamEvent::Plan(plan.clone()),
            RunEvent::StepStart { step } => StreamEvent::StepStart(step.clone()),
            RunEvent::StepResult { step, value } => match value {
                Value::Chart(c) => StreamEvent::Chart(c.clone()),
                Value::Error(m) => StreamEvent::Error { message: m.clone(), step: Some(step.index) },
                Value::Text(_) if step.agent_role == AGGREGATOR_ROLE => return,
                v => StreamEvent::StepResult { step: step.index, value: v.clone() },
            },
            RunEvent::Final { text } => StreamEvent::Final { text: text.clone() },
        };
        push(event, &mut events);
    });
    let outputs = match result {
        Ok(outputs) => outputs,
        Err(e) => {
            push(StreamEvent::Error { message: e.to_string(), step: None }, &mut events);
            Vec::new()
        }
    };
    push(StreamEvent::Done {}, &mut events);
    match storage_error {
        Some(e) => Err(e),
        None => Ok(TurnOutcome { outputs, events }),
    }
}

fn is_pending(store: &EventStore, conv: &str, text: &str) -> bool {
    let Ok(log) = store.load_events(conv) else { return false };
    log.events.last().is_some_and(|e| {
        e.event_type == EventType::UserMessage && e.payload.get("text").and_then(|t| t.as_str()) == Some(text)
    })
}
