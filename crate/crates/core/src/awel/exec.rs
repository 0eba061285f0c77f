use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{topo_order, validate, AwelError, DagSpec, Edge, NodeKind, OperatorSpec};
use crate::agents::{dispatch, plan, AgentRuntime, OutputKind, PlanStep, TaskPlan, PLANNER_ROLE};
use crate::value::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Batch,
    Stream,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeFailure {
    pub node: String,
    pub cause: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionReport {
    pub dag_name: String,
    pub node_results: BTreeMap<String, Value>,
    /// Executed nodes, in topological order.
    pub order: Vec<String>,
    pub mode: Mode,
    /// Nodes that failed; everything downstream of them was not run.
    #[serde(default)]
    pub failures: Vec<NodeFailure>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ExecOptions {
    /// Run nodes that become ready together on separate threads.
    pub parallel: bool,
}

enum State {
    Done(Value),
    /// Every incoming edge was inactive.
    Skipped,
    Failed,
    /// An upstream node failed.
    Aborted,
}

type Emit<'a> = &'a mut dyn FnMut(&str, &Value);

/// Runs a DAG in batch mode, one node at a time in topological order.
pub fn execute(
    dag: &DagSpec,
    inputs: &BTreeMap<String, Value>,
    rt: &AgentRuntime,
) -> Result<ExecutionReport, AwelError> {
    execute_with(dag, inputs, rt, ExecOptions::default())
}

pub fn execute_with(
    dag: &DagSpec,
    inputs: &BTreeMap<String, Value>,
    rt: &AgentRuntime,
    options: ExecOptions,
) -> Result<ExecutionReport, AwelError> {
    Engine::new(dag, inputs, rt)?.run(Mode::Batch, options.parallel, None)
}

/// Runs a DAG sequentially, handing each chunk a `stream_transform` node
/// produces to `emit` as soon as it exists.
pub fn execute_stream(
    dag: &DagSpec,
    inputs: &BTreeMap<String, Value>,
    rt: &AgentRuntime,
    emit: &mut dyn FnMut(&str, &Value),
) -> Result<ExecutionReport, AwelError> {
    Engine::new(dag, inputs, rt)?.run(Mode::Stream, false, Some(emit))
}

struct Engine<'a> {
    dag: &'a DagSpec,
    inputs: &'a BTreeMap<String, Value>,
    rt: &'a AgentRuntime,
    order: Vec<String>,
    nodes: BTreeMap<&'a str, &'a OperatorSpec>,
    incoming: BTreeMap<&'a str, Vec<&'a Edge>>,
}

/// What a node is given when it runs.
struct Call<'a> {
    node: &'a OperatorSpec,
    /// Active upstream values by node id.
    upstream: BTreeMap<String, Value>,
    external: Option<&'a Value>,
    /// The newest plan among the node's ancestors.
    plan: Option<TaskPlan>,
}

impl<'a> Engine<'a> {
    fn new(dag: &'a DagSpec, inputs: &'a BTreeMap<String, Value>, rt: &'a AgentRuntime) -> Result<Self, AwelError> {
        let violations = validate(dag);
        if !violations.is_empty() {
            return Err(AwelError::Invalid(violations));
        }
        for n in dag.nodes.iter().filter(|n| n.kind == NodeKind::Input) {
            if !inputs.contains_key(&n.id) {
                return Err(AwelError::MissingInput(n.id.clone()));
            }
        }
        let nodes = dag.nodes.iter().map(|n| (n.id.as_str(), n)).collect();
        let mut incoming: BTreeMap<&str, Vec<&Edge>> = BTreeMap::new();
        for e in &dag.edges {
            incoming.entry(e.to.as_str()).or_default().push(e);
        }
        Ok(Self { dag, inputs, rt, order: topo_order(dag)?, nodes, incoming })
    }

    fn ancestors(&self, id: &str) -> BTreeSet<&'a str> {
        let mut seen = BTreeSet::new();
        let mut stack = vec![id];
        while let Some(n) = stack.pop() {
            for e in self.incoming.get(n).into_iter().flatten() {
                if seen.insert(e.from.as_str()) {
                    stack.push(&e.from);
                }
            }
        }
        seen
    }

    /// Decides whether `id` runs, and with what.
    fn prepare(
        &self,
        id: &str,
        states: &BTreeMap<String, State>,
        chosen: &BTreeMap<String, Option<String>>,
    ) -> Result<Call<'a>, State> {
        let node = self.nodes[id];
        let edges = self.incoming.get(id).map(Vec::as_slice).unwrap_or(&[]);
        let mut upstream = BTreeMap::new();
        for e in edges {
            match &states[&e.from] {
                State::Failed | State::Aborted => return Err(State::Aborted),
                State::Skipped => {}
                State::Done(v) => {
                    let active = match chosen.get(&e.from) {
                        Some(label) => label.as_ref() == e.when.as_ref(),
                        None => true,
                    };
                    if active {
                        upstream.insert(e.from.clone(), v.clone());
                    }
                }
            }
        }
        if !edges.is_empty() && upstream.is_empty() {
            return Err(State::Skipped);
        }
        let external = match node.kind {
            NodeKind::Input | NodeKind::StreamSource => self.inputs.get(id),
            _ => None,
        };
        let mut plan = None;
        if node.kind == NodeKind::Agent {
            let ancestors = self.ancestors(id);
            for a in self.order.iter().filter(|a| ancestors.contains(a.as_str())) {
                if let Some(State::Done(Value::Plan(p))) = states.get(a) {
                    plan = Some(p.clone());
                }
            }
        }
        Ok(Call { node, upstream, external, plan })
    }

    fn run(self, mode: Mode, parallel: bool, mut emit: Option<Emit<'_>>) -> Result<ExecutionReport, AwelError> {
        let mut states: BTreeMap<String, State> = BTreeMap::new();
        let mut chosen: BTreeMap<String, Option<String>> = BTreeMap::new();
        let mut failures = Vec::new();
        let mut pending: Vec<&str> = self.order.iter().map(String::as_str).collect();

        while !pending.is_empty() {
            // Nodes whose upstreams are all settled; in sequential mode just
            // the next one in topological order.
            let wave: Vec<&str> = if parallel {
                pending
                    .iter()
                    .copied()
                    .filter(|id| self.incoming.get(id).into_iter().flatten().all(|e| states.contains_key(&e.from)))
                    .collect()
            } else {
                vec![pending[0]]
            };
            pending.retain(|id| !wave.contains(id));

            let mut calls = Vec::new();
            for id in &wave {
                match self.prepare(id, &states, &chosen) {
                    Ok(call) => calls.push(call),
                    Err(state) => {
                        states.insert(id.to_string(), state);
                    }
                }
            }
            let results: Vec<Result<Value, String>> = if parallel && calls.len() > 1 {
                std::thread::scope(|s| {
                    let handles: Vec<_> = calls.iter().map(|c| s.spawn(|| run_node(c, self.rt, None))).collect();
                    handles.into_iter().map(|h| h.join().unwrap_or_else(|_| Err("node panicked".into()))).collect()
                })
            } else {
                let mut out = Vec::with_capacity(calls.len());
                for c in &calls {
                    let emit = emit.as_mut().map(|e| &mut **e as &mut dyn FnMut(&str, &Value));
                    out.push(run_node(c, self.rt, emit));
                }
                out
            };

            for (call, result) in calls.iter().zip(results) {
                let id = call.node.id.clone();
                let result = result.and_then(|v| {
                    if call.node.kind == NodeKind::Branch {
                        let label = select_branch(&v, self.dag.edges.iter().filter(|e| e.from == id))?;
                        chosen.insert(id.clone(), Some(label));
                    }
                    Ok(v)
                });
                match result {
                    Ok(v) => {
                        states.insert(id, State::Done(v));
                    }
                    Err(cause) => {
                        log::warn!("node {id} failed: {cause}");
                        failures.push(NodeFailure { node: id.clone(), cause });
                        states.insert(id, State::Failed);
                    }
                }
            }
        }

        let mut node_results = BTreeMap::new();
        let mut order = Vec::new();
        for id in &self.order {
            if let Some(State::Done(v)) = states.remove(id) {
                order.push(id.clone());
                node_results.insert(id.clone(), v);
            }
        }
        failures.sort_by(|a, b| {
            let pos = |n: &str| self.order.iter().position(|o| o == n);
            pos(&a.node).cmp(&pos(&b.node))
        });
        Ok(ExecutionReport { dag_name: self.dag.name.clone(), node_results, order, mode, failures })
    }
}

/// Picks the one active outgoing label: exact match, then the first
/// `contains:` match, then `default`.
fn select_branch<'e>(value: &Value, edges: impl Iterator<Item = &'e Edge>) -> Result<String, String> {
    let text = value.coerce_text();
    let labels: Vec<&str> = edges.filter_map(|e| e.when.as_deref()).collect();
    labels
        .iter()
        .find(|l| **l == text)
        .or_else(|| labels.iter().find(|l| l.strip_prefix("contains:").is_some_and(|s| text.contains(s))))
        .or_else(|| labels.iter().find(|l| **l == "default"))
        .map(|l| l.to_string())
        .ok_or_else(|| format!("no branch label matches {text:?}"))
}

/// Single upstream value as is; several become a list in id order.
fn batch_input(call: &Call<'_>) -> Value {
    if let Some(v) = call.external {
        return v.clone().collect();
    }
    let mut values: Vec<Value> = call.upstream.values().cloned().map(Value::collect).collect();
    match values.len() {
        0 => Value::text(""),
        1 => values.pop().unwrap(),
        _ => Value::List(values),
    }
}

/// Case mapping is per character so that applying it chunk by chunk gives
/// the same text as applying it to the joined chunks.
fn text_fn(name: &str, v: Value) -> Result<Value, String> {
    match (name, v) {
        ("identity", v) => Ok(v),
        ("upper" | "lower", Value::List(items)) => {
            items.into_iter().map(|i| text_fn(name, i)).collect::<Result<_, _>>().map(Value::List)
        }
        ("upper", Value::Text(t)) => Ok(Value::Text(t.chars().flat_map(char::to_uppercase).collect())),
        ("lower", Value::Text(t)) => Ok(Value::Text(t.chars().flat_map(char::to_lowercase).collect())),
        ("upper" | "lower", other) => Err(format!("`{name}` needs text, got {}", other.kind())),
        (other, _) => Err(format!("unknown function `{other}`")),
    }
}

fn chunks_of(v: &Value) -> Vec<Value> {
    match v {
        Value::Stream(items) => items.clone(),
        other => vec![other.clone()],
    }
}

fn run_node(call: &Call<'_>, rt: &AgentRuntime, emit: Option<Emit<'_>>) -> Result<Value, String> {
    let node = call.node;
    let func = node.config_str("fn").unwrap_or("identity");
    match node.kind {
        NodeKind::Input | NodeKind::Output | NodeKind::Branch => Ok(batch_input(call)),
        NodeKind::Join => Ok(Value::List(call.upstream.values().cloned().map(Value::collect).collect())),
        NodeKind::Map if func == "concat" => {
            let sep = node.config_str("sep").unwrap_or("");
            Ok(match batch_input(call) {
                Value::List(items) => Value::Text(items.iter().map(Value::coerce_text).collect::<Vec<_>>().join(sep)),
                other => Value::Text(other.coerce_text()),
            })
        }
        NodeKind::Map => text_fn(func, batch_input(call)),
        NodeKind::StreamSource => {
            let source = match call.external {
                Some(v) => v.clone(),
                None => Value::Stream(call.upstream.values().flat_map(chunks_of).collect()),
            };
            let items = match (source, node.config_str("sep")) {
                (Value::Stream(items) | Value::List(items), _) => items,
                (Value::Text(t), Some(sep)) if !sep.is_empty() => t.split(sep).map(Value::text).collect(),
                (other, _) => vec![other],
            };
            Ok(Value::Stream(items))
        }
        NodeKind::StreamTransform => {
            if func == "concat" {
                return Err("`concat` is not a per-chunk function".into());
            }
            let mut emit = emit;
            let mut out = Vec::new();
            for chunk in call.upstream.values().flat_map(chunks_of) {
                let v = text_fn(func, chunk)?;
                if let Some(emit) = emit.as_deref_mut() {
                    emit(&node.id, &v);
                }
                out.push(v);
            }
            Ok(Value::Stream(out))
        }
        NodeKind::Agent => run_agent(call, rt).map_err(|e| e.to_string()),
    }
}

fn run_agent(call: &Call<'_>, rt: &AgentRuntime) -> Result<Value, String> {
    let node = call.node;
    let role = node.config_str("role").unwrap_or_default();
    if role == PLANNER_ROLE {
        let goal = node.config_str("goal").map(String::from).unwrap_or_else(|| batch_input(call).coerce_text());
        return plan(&goal, rt).map(Value::Plan).map_err(|e| e.to_string());
    }
    let planned = match node.config.get("step").and_then(|v| v.as_f64()) {
        Some(n) => {
            let plan = call.plan.as_ref().ok_or("`step` needs a planner node upstream")?;
            Some(plan.steps.iter().find(|s| f64::from(s.index) == n).ok_or(format!("plan has no step {n}"))?)
        }
        None => None,
    };
    let upstream: BTreeMap<String, Value> = call
        .upstream
        .iter()
        .filter(|(_, v)| !matches!(v, Value::Plan(_)))
        .map(|(k, v)| (k.clone(), v.clone().collect()))
        .collect();
    let description = match (node.config_str("task"), planned) {
        (Some(task), _) => task.to_string(),
        (None, Some(step)) => step.description.clone(),
        (None, None) => {
            let text = batch_input(call).coerce_text();
            if text.trim().is_empty() {
                return Err("agent node needs `task`, `step` or text input".into());
            }
            text
        }
    };
    let output_kind = match node.config_str("output") {
        Some(k) => OutputKind::parse(k).ok_or(format!("unknown output kind `{k}`"))?,
        None => planned.map_or(OutputKind::Text, |s| s.output_kind),
    };
    let step =
        PlanStep { index: planned.map_or(0, |s| s.index), description, agent_role: role.to_string(), output_kind };
    dispatch(&step, &upstream, rt).map_err(|e| e.to_string())
}
