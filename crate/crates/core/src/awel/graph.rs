use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{AwelError, DagSpec, Edge, NodeKind};

/// A broken structural rule. Violations are data: [`validate`] lists them
/// all instead of stopping at the first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum Violation {
    BadNodeId {
        node: String,
    },
    DuplicateNodeId {
        node: String,
    },
    UnknownNode {
        node: String,
    },
    DuplicateEdge {
        edge: Edge,
    },
    /// One offending cycle, starting at its smallest id.
    Cycle {
        nodes: Vec<String>,
    },
    Unreachable {
        node: String,
    },
    MissingRole {
        node: String,
    },
    Branch {
        node: String,
        reason: String,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::BadNodeId { node } => write!(f, "node id `{node}` must match [a-z][a-z0-9_]*"),
            Self::DuplicateNodeId { node } => write!(f, "node id `{node}` is defined twice"),
            Self::UnknownNode { node } => write!(f, "edge refers to unknown node `{node}`"),
            Self::DuplicateEdge { edge } => write!(f, "edge {} -> {} appears twice", edge.from, edge.to),
            Self::Cycle { nodes } => {
                let mut path = nodes.clone();
                path.extend(nodes.first().cloned());
                write!(f, "cycle {}", path.join(" -> "))
            }
            Self::Unreachable { node } => write!(f, "node `{node}` is not reachable from any root"),
            Self::MissingRole { node } => write!(f, "agent node `{node}` needs a non-empty `role`"),
            Self::Branch { node, reason } => write!(f, "branch `{node}`: {reason}"),
        }
    }
}

pub(crate) fn is_valid_id(id: &str) -> bool {
    let mut chars = id.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_lowercase())
        && chars.all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

/// Adjacency over known ids, duplicate edges collapsed.
struct Graph<'a> {
    ids: BTreeSet<&'a str>,
    succ: BTreeMap<&'a str, BTreeSet<&'a str>>,
    pred: BTreeMap<&'a str, BTreeSet<&'a str>>,
}

impl<'a> Graph<'a> {
    fn new(dag: &'a DagSpec) -> Self {
        let ids: BTreeSet<&str> = dag.nodes.iter().map(|n| n.id.as_str()).collect();
        let mut succ: BTreeMap<&str, BTreeSet<&str>> = ids.iter().map(|&i| (i, BTreeSet::new())).collect();
        let mut pred = succ.clone();
        for e in &dag.edges {
            let (from, to) = (e.from.as_str(), e.to.as_str());
            if ids.contains(from) && ids.contains(to) {
                succ.get_mut(from).unwrap().insert(to);
                pred.get_mut(to).unwrap().insert(from);
            }
        }
        Self { ids, succ, pred }
    }

    /// Kahn's algorithm, smallest ready id first. Returns the order and the
    /// nodes left over (non-empty iff there is a cycle).
    fn kahn(&self) -> (Vec<&'a str>, BTreeSet<&'a str>) {
        let mut indeg: BTreeMap<&str, usize> = self.pred.iter().map(|(k, v)| (*k, v.len())).collect();
        let mut ready: BinaryHeap<Reverse<&str>> =
            indeg.iter().filter(|(_, d)| **d == 0).map(|(k, _)| Reverse(*k)).collect();
        let mut order = Vec::with_capacity(self.ids.len());
        while let Some(Reverse(n)) = ready.pop() {
            order.push(n);
            for &m in &self.succ[n] {
                let d = indeg.get_mut(m).unwrap();
                *d -= 1;
                if *d == 0 {
                    ready.push(Reverse(m));
                }
            }
        }
        let done: HashSet<&str> = order.iter().copied().collect();
        let left = self.ids.iter().copied().filter(|n| !done.contains(n)).collect();
        (order, left)
    }

    /// Every leftover node has a leftover predecessor, so walking
    /// predecessors from any of them must close a loop.
    fn one_cycle(&self, left: &BTreeSet<&'a str>) -> Vec<String> {
        let Some(&start) = left.iter().next() else { return Vec::new() };
        let mut path: Vec<&str> = vec![start];
        let mut seen: BTreeMap<&str, usize> = BTreeMap::from([(start, 0)]);
        let mut cur = start;
        loop {
            let prev =
                *self.pred[cur].iter().find(|p| left.contains(*p)).expect("leftover node has a leftover predecessor");
            if let Some(&at) = seen.get(prev) {
                let mut cycle: Vec<String> = path[at..].iter().rev().map(|s| s.to_string()).collect();
                let min = cycle.iter().enumerate().min_by_key(|(_, s)| s.as_str()).map(|(i, _)| i).unwrap();
                cycle.rotate_left(min);
                return cycle;
            }
            seen.insert(prev, path.len());
            path.push(prev);
            cur = prev;
        }
    }
}

/// Lists every violated structural rule; empty means the DAG is usable.
pub fn validate(dag: &DagSpec) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    for n in &dag.nodes {
        if !is_valid_id(&n.id) {
            out.push(Violation::BadNodeId { node: n.id.clone() });
        }
        if !ids.insert(n.id.as_str()) {
            out.push(Violation::DuplicateNodeId { node: n.id.clone() });
        }
        if n.kind == NodeKind::Agent && n.config_str("role").is_none_or(|r| r.trim().is_empty()) {
            out.push(Violation::MissingRole { node: n.id.clone() });
        }
    }
    let mut unknown = BTreeSet::new();
    let mut edges = HashSet::new();
    for e in &dag.edges {
        for end in [&e.from, &e.to] {
            if !ids.contains(end.as_str()) && unknown.insert(end.clone()) {
                out.push(Violation::UnknownNode { node: end.clone() });
            }
        }
        if !edges.insert(e) {
            out.push(Violation::DuplicateEdge { edge: e.clone() });
        }
    }
    for n in dag.nodes.iter().filter(|n| n.kind == NodeKind::Branch) {
        let labels: Vec<Option<&str>> =
            dag.edges.iter().filter(|e| e.from == n.id).map(|e| e.when.as_deref()).collect();
        let distinct: HashSet<_> = labels.iter().collect();
        let reason = if labels.len() < 2 {
            Some("needs at least 2 outgoing edges".to_string())
        } else if labels.contains(&None) {
            Some("every outgoing edge needs a `when` label".to_string())
        } else if distinct.len() != labels.len() {
            Some("`when` labels must be distinct".to_string())
        } else {
            None
        };
        if let Some(reason) = reason {
            out.push(Violation::Branch { node: n.id.clone(), reason });
        }
    }

    let graph = Graph::new(dag);
    let (_, left) = graph.kahn();
    if !left.is_empty() {
        out.push(Violation::Cycle { nodes: graph.one_cycle(&left) });
    }
    let mut reached: HashSet<&str> = HashSet::new();
    let mut stack: Vec<&str> = graph.pred.iter().filter(|(_, p)| p.is_empty()).map(|(k, _)| *k).collect();
    while let Some(n) = stack.pop() {
        if reached.insert(n) {
            stack.extend(graph.succ[n].iter().copied());
        }
    }
    for &n in &graph.ids {
        if !reached.contains(n) {
            out.push(Violation::Unreachable { node: n.to_string() });
        }
    }
    out
}

/// Topological order; among ready nodes the smallest id goes first.
pub fn topo_order(dag: &DagSpec) -> Result<Vec<String>, AwelError> {
    let graph = Graph::new(dag);
    let (order, left) = graph.kahn();
    if !left.is_empty() {
        return Err(AwelError::CyclicGraph);
    }
    Ok(order.into_iter().map(String::from).collect())
}

/// Nodes grouped by longest distance from a root.
pub fn levels(dag: &DagSpec) -> Result<Vec<Vec<String>>, AwelError> {
    let graph = Graph::new(dag);
    let mut depth: BTreeMap<&str, usize> = BTreeMap::new();
    let mut out: Vec<Vec<String>> = Vec::new();
    for id in topo_order(dag)? {
        let d = graph.pred[id.as_str()].iter().map(|p| depth[p] + 1).max().unwrap_or(0);
        depth.insert(graph.ids.get(id.as_str()).unwrap(), d);
        if out.len() <= d {
            out.resize(d + 1, Vec::new());
        }
        out[d].push(id);
    }
    for level in &mut out {
        level.sort();
    }
    Ok(out)
}
