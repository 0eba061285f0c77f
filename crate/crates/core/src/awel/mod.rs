//! Workflow graphs: a small text language for DAGs of operators, structural
//! checks, and batch or streaming execution against an agent runtime.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

mod dsl;
mod exec;
mod graph;

pub use dsl::{parse_dag_dsl, print_dag};
pub use exec::{execute, execute_stream, execute_with, ExecOptions, ExecutionReport, Mode, NodeFailure};
pub use graph::{levels, topo_order, validate, Violation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Input,
    Output,
    Map,
    Join,
    Branch,
    Agent,
    StreamSource,
    StreamTransform,
}

impl NodeKind {
    pub const ALL: [NodeKind; 8] = [
        Self::Input,
        Self::Output,
        Self::Map,
        Self::Join,
        Self::Branch,
        Self::Agent,
        Self::StreamSource,
        Self::StreamTransform,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Input => "input",
            Self::Output => "output",
            Self::Map => "map",
            Self::Join => "join",
            Self::Branch => "branch",
            Self::Agent => "agent",
            Self::StreamSource => "stream_source",
            Self::StreamTransform => "stream_transform",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

/// A scalar config value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ConfigValue {
    Bool(bool),
    Num(f64),
    Str(String),
}

impl ConfigValue {
    pub fn as_str(&self) -> Option<&str> {
        match self {
            Self::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Self::Num(n) => Some(*n),
            _ => None,
        }
    }
}

impl From<&str> for ConfigValue {
    fn from(s: &str) -> Self {
        Self::Str(s.to_string())
    }
}

impl From<f64> for ConfigValue {
    fn from(n: f64) -> Self {
        Self::Num(n)
    }
}

impl From<bool> for ConfigValue {
    fn from(b: bool) -> Self {
        Self::Bool(b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorSpec {
    pub id: String,
    pub kind: NodeKind,
    #[serde(default)]
    pub config: BTreeMap<String, ConfigValue>,
}

impl OperatorSpec {
    pub fn new(id: impl Into<String>, kind: NodeKind) -> Self {
        Self { id: id.into(), kind, config: BTreeMap::new() }
    }

    pub fn with(mut self, key: &str, value: impl Into<ConfigValue>) -> Self {
        self.config.insert(key.to_string(), value.into());
        self
    }

    pub fn config_str(&self, key: &str) -> Option<&str> {
        self.config.get(key).and_then(ConfigValue::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub from: String,
    pub to: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub when: Option<String>,
}

impl Edge {
    pub fn new(from: impl Into<String>, to: impl Into<String>) -> Self {
        Self { from: from.into(), to: to.into(), when: None }
    }

    pub fn when(from: impl Into<String>, to: impl Into<String>, label: impl Into<String>) -> Self {
        Self { from: from.into(), to: to.into(), when: Some(label.into()) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DagSpec {
    pub name: String,
    pub nodes: Vec<OperatorSpec>,
    #[serde(default)]
    pub edges: Vec<Edge>,
}

impl DagSpec {
    pub fn node(&self, id: &str) -> Option<&OperatorSpec> {
        self.nodes.iter().find(|n| n.id == id)
    }

    /// Canonical JSON: nodes ordered by id, edges by (from, to, when).
    pub fn to_canonical_json(&self) -> String {
        let mut dag = self.clone();
        dag.nodes.sort_by(|a, b| a.id.cmp(&b.id));
        dag.edges.sort();
        serde_json::to_string(&dag).expect("dag serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, AwelError> {
        serde_json::from_str(text).map_err(|e| AwelError::Json(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AwelError {
    #[error("syntax error at {line}:{col}: expected {expected}")]
    Syntax { line: usize, col: usize, expected: String },
    #[error("edge refers to unknown node `{0}`")]
    UnknownNode(String),
    #[error("node id `{0}` is defined twice")]
    DuplicateNodeId(String),
    #[error("invalid dag: {}", list_violations(.0))]
    Invalid(Vec<Violation>),
    #[error("graph has a cycle")]
    CyclicGraph,
    #[error("no input given for node `{0}`")]
    MissingInput(String),
    #[error("invalid dag JSON: {0}")]
    Json(String),
}

fn list_violations(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

/// Parses and validates in one go.
pub fn load_dag(source: &str) -> Result<DagSpec, AwelError> {
    let dag = parse_dag_dsl(source)?;
    let violations = validate(&dag);
    if violations.is_empty() {
        Ok(dag)
    } else {
        Err(AwelError::Invalid(violations))
    }
}

impl fmt::Display for DagSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&print_dag(self))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_json_sorts() {
        let dag = DagSpec {
            name: "t".into(),
            nodes: vec![
                OperatorSpec::new("b", NodeKind::Map).with("fn", "upper"),
                OperatorSpec::new("a", NodeKind::Input),
            ],
            edges: vec![Edge::new("a", "b")],
        };
        let json = dag.to_canonical_json();
        assert_eq!(
            json,
            r#"{"name":"t","nodes":[{"id":"a","kind":"input","config":{}},{"id":"b","kind":"map","config":{"fn":"upper"}}],"edges":[{"from":"a","to":"b"}]}"#
        );
        let back = DagSpec::from_json(&json).unwrap();
        assert_eq!(back.nodes[0].id, "a");
        assert_eq!(back.to_canonical_json(), json);
    }

    #[test]
    fn config_values_round_trip_json() {
        let op = OperatorSpec::new("n", NodeKind::Agent).with("role", "x").with("step", 2.0).with("flag", true);
        let back: OperatorSpec = serde_json::from_str(&serde_json::to_string(&op).unwrap()).unwrap();
        assert_eq!(back, op);
    }
}
