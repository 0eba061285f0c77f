//! Values passed between workflow nodes and archived as agent messages.

use serde::{Deserialize, Serialize};

use crate::agents::TaskPlan;
use crate::datachat::{ChartSpec, ResultTable};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum Value {
    Text(String),
    Table(ResultTable),
    Chart(ChartSpec),
    Plan(TaskPlan),
    List(Vec<Value>),
    /// Chunks of a stream, in arrival order.
    Stream(Vec<Value>),
    /// Output of a failed step.
    Error(String),
}

impl Value {
    pub fn text(s: impl Into<String>) -> Self {
        Value::Text(s.into())
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Value::Text(_) => "text",
            Value::Table(_) => "table",
            Value::Chart(_) => "chart",
            Value::Plan(_) => "plan",
            Value::List(_) => "list",
            Value::Stream(_) => "stream",
            Value::Error(_) => "error",
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            Value::Text(t) => Some(t),
            _ => None,
        }
    }

    pub fn is_error(&self) -> bool {
        matches!(self, Value::Error(_))
    }

    /// Streams become lists; everything else is unchanged.
    pub fn collect(self) -> Value {
        match self {
            Value::Stream(items) => Value::List(items),
            v => v,
        }
    }

    /// String form used by branch predicates and text-only map functions.
    /// Text is taken verbatim; lists join their items with no separator.
    pub fn coerce_text(&self) -> String {
        match self {
            Value::Text(t) => t.clone(),
            Value::Error(e) => e.clone(),
            Value::List(items) | Value::Stream(items) => items.iter().map(Value::coerce_text).collect(),
            other => serde_json::to_string(other).unwrap_or_default(),
        }
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value::Text(s.to_string())
    }
}

impl From<String> for Value {
    fn from(s: String) -> Self {
        Value::Text(s)
    }
}
