//! Oracles and generators shared by the integration tests. The oracles are
//! written from the stated rules, not from the library code.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::sync::Arc;

use dbchat_core::agents::{default_profiles, AgentRuntime, MemoryArchive};
use dbchat_core::awel::{ConfigValue, DagSpec, Edge, NodeKind, OperatorSpec};
use dbchat_core::demo::mock_gateway;
use dbchat_core::smmf::MockScript;
use dbchat_core::{DocumentChunk, Value};
use rand::rngs::StdRng;
use rand::Rng;

/// Runtime with no scripted replies, for DAGs without agent nodes.
pub fn plain_runtime() -> AgentRuntime {
    AgentRuntime::new(default_profiles(), mock_gateway(MockScript::default()), Arc::new(MemoryArchive::default()))
        .unwrap()
}

/// Three-colour depth-first search; true iff a directed cycle exists.
pub fn dfs_has_cycle(n: usize, edges: &[(usize, usize)]) -> bool {
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        adj[a].push(b);
    }
    // 0 white, 1 grey (on stack), 2 black
    let mut colour = vec![0u8; n];
    fn visit(v: usize, adj: &[Vec<usize>], colour: &mut [u8]) -> bool {
        colour[v] = 1;
        for &w in &adj[v] {
            if colour[w] == 1 || (colour[w] == 0 && visit(w, adj, colour)) {
                return true;
            }
        }
        colour[v] = 2;
        false
    }
    (0..n).any(|v| colour[v] == 0 && visit(v, &adj, &mut colour))
}

pub fn node_name(i: usize) -> String {
    format!("n{i:02}")
}

/// Random digraph on at most `max_n` map nodes, self loops allowed, no
/// repeated edges.
pub fn random_digraph(rng: &mut StdRng, max_n: usize) -> (usize, Vec<(usize, usize)>, DagSpec) {
    let n = rng.random_range(1..=max_n);
    let p = rng.random_range(0.0..0.3);
    let mut edges = Vec::new();
    for a in 0..n {
        for b in 0..n {
            if rng.random_bool(p / if a == b { 4.0 } else { 1.0 }) {
                edges.push((a, b));
            }
        }
    }
    let dag = DagSpec {
        name: "random".into(),
        nodes: (0..n).map(|i| OperatorSpec::new(node_name(i), NodeKind::Map)).collect(),
        edges: edges.iter().map(|(a, b)| Edge::new(node_name(*a), node_name(*b))).collect(),
    };
    (n, edges, dag)
}

const STRING_CHARS: &[char] = &['a', 'Z', ' ', '"', '\\', '\n', '#', '{', '}', 'é', '→', '\t', '=', ',', '1'];

pub fn random_string(rng: &mut StdRng, max_len: usize) -> String {
    let len = rng.random_range(0..=max_len);
    (0..len).map(|_| STRING_CHARS[rng.random_range(0..STRING_CHARS.len())]).collect()
}

fn random_number(rng: &mut StdRng) -> f64 {
    match rng.random_range(0..4) {
        0 => f64::from(rng.random_range(-1000..1000)),
        1 => rng.random_range(-1e6..1e6),
        2 => rng.random_range(-1.0..1.0) * 10f64.powi(rng.random_range(-20..20)),
        _ => 1e20 * f64::from(rng.random_range(1..9)),
    }
}

fn random_config(rng: &mut StdRng) -> BTreeMap<String, ConfigValue> {
    let keys = ["fn", "sep", "task", "k", "on", "x_1", "when", "node"];
    let mut out = BTreeMap::new();
    for _ in 0..rng.random_range(0..4) {
        let key = keys[rng.random_range(0..keys.len())].to_string();
        let value = match rng.random_range(0..3) {
            0 => ConfigValue::Str(random_string(rng, 8)),
            1 => ConfigValue::Num(random_number(rng)),
            _ => ConfigValue::Bool(rng.random_bool(0.5)),
        };
        out.insert(key, value);
    }
    out
}

/// Random DAG satisfying every structural rule: edges only go forward in
/// node order, agents have roles, branches have at least two distinctly
/// labelled edges.
pub fn random_valid_dag(rng: &mut StdRng) -> DagSpec {
    let n = rng.random_range(1..=12);
    let ids: Vec<String> = {
        let mut ids = Vec::new();
        let words = ["node", "dag", "when", "input", "a", "b_2", "x"];
        while ids.len() < n {
            let id = if rng.random_bool(0.3) {
                format!("{}{}", words[rng.random_range(0..words.len())], ids.len())
            } else {
                node_name(ids.len())
            };
            if !ids.contains(&id) {
                ids.push(id);
            }
        }
        ids
    };
    let mut nodes = Vec::new();
    let mut edges = Vec::new();
    for (i, id) in ids.iter().enumerate() {
        let later = n - i - 1;
        let mut kind = NodeKind::ALL[rng.random_range(0..NodeKind::ALL.len())];
        if kind == NodeKind::Branch && later < 2 {
            kind = NodeKind::Map;
        }
        let mut config = random_config(rng);
        if kind == NodeKind::Agent {
            config.insert("role".into(), ConfigValue::Str("chart_generator".into()));
        }
        nodes.push(OperatorSpec { id: id.clone(), kind, config });
        if kind == NodeKind::Branch {
            let targets = rng.random_range(2..=later.min(4));
            for (t, j) in (i + 1..n).take(targets).enumerate() {
                edges.push(Edge::when(id.clone(), ids[j].clone(), format!("{}{t}", random_string(rng, 4))));
            }
        } else {
            for target in &ids[i + 1..] {
                if rng.random_bool(0.25) {
                    edges.push(Edge::new(id.clone(), target.clone()));
                }
            }
        }
    }
    // Labels only need to be distinct per branch node; the suffix does that.
    if rng.random_bool(0.5) {
        nodes.reverse();
    }
    DagSpec { name: random_string(rng, 10), nodes, edges }
}

pub const CASE_FNS: [&str; 3] = ["upper", "lower", "identity"];

/// A stream pipeline: a source, a tree of per-chunk transforms and a
/// collecting map at the end of one branch.
pub fn random_stream_pipeline(rng: &mut StdRng) -> DagSpec {
    let mut nodes = vec![OperatorSpec::new("src", NodeKind::StreamSource)];
    let mut edges = Vec::new();
    let transforms = rng.random_range(1..=5);
    for i in 0..transforms {
        let id = format!("t{i}");
        let f = CASE_FNS[rng.random_range(0..CASE_FNS.len())];
        nodes.push(OperatorSpec::new(&id, NodeKind::StreamTransform).with("fn", f));
        let parent = if i == 0 { "src".to_string() } else { format!("t{}", rng.random_range(0..i)) };
        let parent = if rng.random_bool(0.2) { "src".to_string() } else { parent };
        edges.push(Edge::new(parent, id));
    }
    nodes.push(OperatorSpec::new("sink", NodeKind::Map));
    edges.push(Edge::new(format!("t{}", transforms - 1), "sink"));
    DagSpec { name: "pipeline".into(), nodes, edges }
}

pub fn random_chunks(rng: &mut StdRng) -> Vec<Value> {
    (0..rng.random_range(0..8)).map(|_| Value::text(random_string(rng, 6))).collect()
}

/// Full scan: cosine of every chunk, descending, ties by id, first k.
pub fn brute_force_top_k(chunks: &[DocumentChunk], query: &[f64], k: usize) -> Vec<String> {
    let mut scored: Vec<(f64, String)> = chunks
        .iter()
        .map(|c| {
            let dot: f64 = c.vector.iter().zip(query).map(|(a, b)| a * b).sum();
            let na: f64 = c.vector.iter().map(|a| a * a).sum();
            let nq: f64 = query.iter().map(|a| a * a).sum();
            let s = if na == 0.0 || nq == 0.0 { 0.0 } else { (dot / (na.sqrt() * nq.sqrt())).clamp(-1.0, 1.0) };
            (s, c.chunk_id.clone())
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
    scored.into_iter().take(k).map(|(_, id)| id).collect()
}

const WORDS: &[&str] = &[
    "sales", "order", "user", "chart", "month", "revenue", "segment", "product", "north", "south", "growth", "report",
    "quarter", "donut", "bar", "area", "trend", "table", "query", "agent", "plan", "store", "fox",
];

pub fn random_sentence(rng: &mut StdRng, max_words: usize) -> String {
    let n = rng.random_range(1..=max_words);
    (0..n).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect::<Vec<_>>().join(" ")
}

pub fn fixture_path(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}
