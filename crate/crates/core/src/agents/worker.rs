use std::collections::BTreeMap;

use super::planner::json_slice;
use super::{AgentError, AgentRuntime, MessageKind, OutputKind, PlanStep, AGGREGATOR_ROLE};
use crate::datachat::{extract_sql, rows_to_chart, ChartSpec, ChartType, ResultTable, DEFAULT_ROW_LIMIT};
use crate::rag::{hybrid_search, redact, Query};
use crate::smmf::ChatMessage;
use crate::template::fill;
use crate::value::Value;

const STEP_TEMPLATE: &str = include_str!("../../prompts/step.txt");
const OUTPUT_REPAIR_TEMPLATE: &str = include_str!("../../prompts/output_repair.txt");
const FORMAT_CHART: &str = include_str!("../../prompts/format_chart.txt");
const FORMAT_SQL: &str = include_str!("../../prompts/format_sql.txt");
const FORMAT_TABLE: &str = include_str!("../../prompts/format_table.txt");
const FORMAT_TEXT: &str = include_str!("../../prompts/format_text.txt");

/// How a step's reply is turned into a value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputMode {
    ChartJson,
    /// SQL run against the database, result charted.
    ChartSql,
    /// SQL run against the database, result returned as a table.
    TableSql,
    TableJson,
    Text,
}

impl OutputMode {
    pub fn for_step(kind: OutputKind, rt: &AgentRuntime) -> Self {
        let has_db = rt.database().is_some();
        match kind {
            OutputKind::Chart if has_db && rt.settings().chart_via_sql => Self::ChartSql,
            OutputKind::Chart => Self::ChartJson,
            OutputKind::Table if has_db => Self::TableSql,
            OutputKind::Table => Self::TableJson,
            OutputKind::Text => Self::Text,
        }
    }

    pub fn format_instructions(self) -> &'static str {
        match self {
            Self::ChartJson => FORMAT_CHART,
            Self::ChartSql | Self::TableSql => FORMAT_SQL,
            Self::TableJson => FORMAT_TABLE,
            Self::Text => FORMAT_TEXT,
        }
        .trim_end()
    }

    fn kind_name(self) -> &'static str {
        match self {
            Self::ChartJson | Self::ChartSql => "chart",
            Self::TableSql | Self::TableJson => "table",
            Self::Text => "text",
        }
    }
}

fn convert(raw: &str, mode: OutputMode, step: &PlanStep, rt: &AgentRuntime) -> Result<Value, String> {
    match mode {
        OutputMode::Text => Ok(Value::Text(raw.to_string())),
        OutputMode::ChartJson => {
            let json = json_slice(raw, '{', '}').ok_or("no JSON object found")?;
            let spec: ChartSpec = serde_json::from_str(json).map_err(|e| format!("invalid chart JSON: {e}"))?;
            spec.validate().map_err(|e| e.to_string())?;
            Ok(Value::Chart(spec))
        }
        OutputMode::TableJson => {
            let json = json_slice(raw, '{', '}').ok_or("no JSON object found")?;
            let table: ResultTable = serde_json::from_str(json).map_err(|e| format!("invalid table JSON: {e}"))?;
            table.check().map_err(|e| e.to_string())?;
            Ok(Value::Table(table))
        }
        OutputMode::ChartSql | OutputMode::TableSql => {
            let db = rt.database().ok_or("no database attached")?;
            let sql = extract_sql(raw).ok_or("no SQL found")?;
            let table = db.execute_sql(&sql, DEFAULT_ROW_LIMIT).map_err(|e| e.to_string())?;
            if mode == OutputMode::TableSql {
                return Ok(Value::Table(table));
            }
            let spec = rows_to_chart(&table, ChartType::mentioned_in(&step.description)).map_err(|e| e.to_string())?;
            Ok(Value::Chart(spec))
        }
    }
}

fn describe_value(v: &Value) -> String {
    match v {
        Value::Text(t) => t.clone(),
        Value::Error(e) => format!("failed: {e}"),
        other => serde_json::to_string(other).unwrap_or_default(),
    }
}

/// The context message: earlier results and retrieved knowledge.
fn context_message(step: &PlanStep, upstream: &BTreeMap<String, Value>, rt: &AgentRuntime) -> Option<String> {
    let mut sections = Vec::new();
    if !upstream.is_empty() {
        let lines: Vec<String> =
            upstream.iter().map(|(k, v)| format!("{k} ({}): {}", v.kind(), describe_value(v))).collect();
        sections.push(format!("Results of earlier steps:\n{}", lines.join("\n")));
    }
    if let Some(kb) = rt.knowledge() {
        let kb = kb.read().unwrap();
        if !kb.is_empty() {
            let hits = Query::new(&step.description, rt.settings().knowledge_k.max(1), kb.encoder_dim())
                .and_then(|q| hybrid_search(&kb, &q))
                .unwrap_or_default();
            let texts: Vec<String> = hits.iter().filter_map(|h| kb.get(&h.chunk_id)).map(|c| redact(&c.text)).collect();
            if !texts.is_empty() {
                sections.push(format!("Relevant knowledge:\n{}", texts.join("\n---\n")));
            }
        }
    }
    (!sections.is_empty()).then(|| sections.join("\n\n"))
}

/// Appends a note for each failed upstream step the aggregator text leaves out.
fn mention_failures(text: String, upstream: &BTreeMap<String, Value>) -> String {
    let mut out = text;
    for (key, value) in upstream {
        if let Value::Error(e) = value {
            if !out.contains(key.as_str()) {
                out.push_str(&format!("\n\nNote: {key} failed: {e}"));
            }
        }
    }
    out
}

/// Runs one plan step on the agent registered for its role. The request and
/// the response (the output value, or an error value) are archived.
pub fn dispatch(step: &PlanStep, upstream: &BTreeMap<String, Value>, rt: &AgentRuntime) -> Result<Value, AgentError> {
    let profile =
        rt.profile_for_role(&step.agent_role).ok_or_else(|| AgentError::NoAgentForRole(step.agent_role.clone()))?;
    let planner = rt.planner_name().to_string();
    let mode = OutputMode::for_step(step.output_kind, rt);
    let format = mode.format_instructions();
    let prompt = fill(STEP_TEMPLATE, &[("{description}", step.description.trim()), ("{format}", format)]);

    let mut messages = Vec::new();
    if !profile.system_prompt.is_empty() {
        messages.push(ChatMessage::system(profile.system_prompt.clone()));
    }
    let context = context_message(step, upstream, rt);
    let request_text = match &context {
        Some(c) => format!("{c}\n\n{prompt}"),
        None => prompt.clone(),
    };
    if let Some(c) = context {
        messages.push(ChatMessage::user(c));
    }
    messages.push(ChatMessage::user(prompt));
    rt.record(MessageKind::Request, &planner, &profile.name, Value::Text(request_text))?;

    let result = (|| {
        let mut attempt = 0;
        loop {
            let resp = rt.complete(messages.clone())?;
            match convert(&resp.content, mode, step, rt) {
                Ok(v) => return Ok(v),
                Err(reason) if attempt < profile.max_retries => {
                    log::warn!("{} output rejected: {reason}", profile.name);
                    attempt += 1;
                    messages.push(ChatMessage::assistant(resp.content));
                    messages.push(ChatMessage::user(fill(
                        OUTPUT_REPAIR_TEMPLATE,
                        &[("{error}", &reason), ("{format}", format)],
                    )));
                }
                Err(reason) => {
                    return Err(AgentError::OutputParse {
                        role: step.agent_role.clone(),
                        kind: mode.kind_name(),
                        reason,
                    })
                }
            }
        }
    })();
    let result = result.map(|v| match v {
        Value::Text(t) if step.agent_role == AGGREGATOR_ROLE => Value::Text(mention_failures(t, upstream)),
        v => v,
    });
    let archived = match &result {
        Ok(v) => v.clone(),
        Err(e) => Value::Error(e.to_string()),
    };
    rt.record(MessageKind::Response, &profile.name, &planner, archived)?;
    result
}
