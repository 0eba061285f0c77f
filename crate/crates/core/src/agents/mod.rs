//! Multi-agent runtime: a planner turns a goal into a numbered plan, worker
//! agents matched by role carry out the steps through model calls, and an
//! aggregator combines their results. Every inter-agent message goes to an
//! [`Archive`].

mod archive;
mod planner;
mod run;
mod worker;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, RwLock};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datachat::Database;
use crate::rag::KnowledgeBase;
use crate::smmf::{ChatMessage, ModelClient, ModelError, ModelRequest, ModelResponse};
use crate::value::Value;

pub use archive::{replay_history, replay_runs, Archive, MemoryArchive, MessageKind, ReplayedRun};
pub use planner::{parse_plan, plan, PLANNER_TEMPLATE, PLAN_SCHEMA};
pub use run::{run_goal, run_goal_with, RunEvent};
pub use worker::{dispatch, OutputMode};

pub const PLANNER_ROLE: &str = "planner";
pub const AGGREGATOR_ROLE: &str = "aggregator";

const DEFAULT_PROFILES: &str = include_str!("../../prompts/profiles.json");

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AgentError {
    #[error("goal is empty")]
    EmptyGoal,
    #[error("could not parse plan from model response: {raw}")]
    PlanParse { raw: String },
    #[error("no agent registered for role `{0}`")]
    NoAgentForRole(String),
    #[error("could not parse {kind} output from `{role}` agent: {reason}")]
    OutputParse { role: String, kind: &'static str, reason: String },
    #[error("unknown conversation `{0}`")]
    UnknownConversation(String),
    #[error("archive error: {0}")]
    Archive(String),
    #[error("invalid agent profile: {0}")]
    InvalidProfile(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn default_max_retries() -> u8 {
    2
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentProfile {
    pub name: String,
    pub role: String,
    pub system_prompt: String,
    #[serde(default = "default_max_retries")]
    pub max_retries: u8,
}

impl AgentProfile {
    pub fn new(name: impl Into<String>, role: impl Into<String>, system_prompt: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            role: role.into(),
            system_prompt: system_prompt.into(),
            max_retries: default_max_retries(),
        }
    }

    pub fn with_max_retries(mut self, n: u8) -> Self {
        self.max_retries = n;
        self
    }
}

/// The shipped planner, chart, SQL and aggregator agents.
pub fn default_profiles() -> Vec<AgentProfile> {
    let mut profiles = vec![AgentProfile::new("planner", PLANNER_ROLE, PLANNER_TEMPLATE).with_max_retries(1)];
    profiles.extend(serde_json::from_str::<Vec<AgentProfile>>(DEFAULT_PROFILES).expect("bundled profiles.json"));
    profiles
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputKind {
    Chart,
    Table,
    Text,
}

impl OutputKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Chart => "chart",
            Self::Table => "table",
            Self::Text => "text",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "chart" => Some(Self::Chart),
            "table" => Some(Self::Table),
            "text" => Some(Self::Text),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanStep {
    /// 1-based.
    pub index: u32,
    pub description: String,
    pub agent_role: String,
    pub output_kind: OutputKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskPlan {
    pub goal: String,
    pub steps: Vec<PlanStep>,
}

/// One archived inter-agent message.
///
/// `conversation_id`, `kind` and `created_at` are not part of the stored
/// payload; archives fill them in on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentMessage {
    pub id: String,
    #[serde(skip)]
    pub conversation_id: String,
    #[serde(skip)]
    pub kind: MessageKind,
    pub sender: String,
    pub receiver: String,
    pub content: Value,
    pub turn: u64,
    #[serde(skip)]
    pub created_at: DateTime<Utc>,
}

impl AgentMessage {
    pub fn id_for_turn(turn: u64) -> String {
        format!("msg-{turn:04}")
    }
}

/// Shared flag checked before every model call of a run.
#[derive(Debug, Clone, Default)]
pub struct CancelToken(Arc<AtomicBool>);

impl CancelToken {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn cancel(&self) {
        self.0.store(true, Ordering::SeqCst);
    }

    pub fn is_cancelled(&self) -> bool {
        self.0.load(Ordering::SeqCst)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuntimeSettings {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Chart steps ask for SQL and chart the query result instead of asking
    /// for chart JSON. Needs a database.
    pub chart_via_sql: bool,
    /// Knowledge chunks added to step prompts when a knowledge base is set.
    pub knowledge_k: usize,
}

impl Default for RuntimeSettings {
    fn default() -> Self {
        Self { model: "mock".into(), temperature: 0.0, max_tokens: 1024, chart_via_sql: false, knowledge_k: 3 }
    }
}

/// Everything an agent needs: profiles, a model client, an archive, and
/// optional knowledge and database handles. Cheap to clone.
#[derive(Clone)]
pub struct AgentRuntime {
    profiles: Arc<BTreeMap<String, AgentProfile>>,
    client: Arc<dyn ModelClient>,
    archive: Arc<dyn Archive>,
    knowledge: Option<Arc<RwLock<KnowledgeBase<f64>>>>,
    database: Option<Arc<Database>>,
    settings: RuntimeSettings,
    conversation_id: String,
    cancel: CancelToken,
}

impl std::fmt::Debug for AgentRuntime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AgentRuntime")
            .field("profiles", &self.profiles.keys().collect::<Vec<_>>())
            .field("settings", &self.settings)
            .field("conversation_id", &self.conversation_id)
            .finish_non_exhaustive()
    }
}

impl AgentRuntime {
    pub fn new(
        profiles: Vec<AgentProfile>,
        client: Arc<dyn ModelClient>,
        archive: Arc<dyn Archive>,
    ) -> Result<Self, AgentError> {
        let mut map = BTreeMap::new();
        for p in profiles {
            if p.name.trim().is_empty() || p.role.trim().is_empty() {
                return Err(AgentError::InvalidProfile("name and role must be non-empty".into()));
            }
            if map.contains_key(&p.name) {
                return Err(AgentError::InvalidProfile(format!("duplicate agent name `{}`", p.name)));
            }
            map.insert(p.name.clone(), p);
        }
        Ok(Self {
            profiles: Arc::new(map),
            client,
            archive,
            knowledge: None,
            database: None,
            settings: RuntimeSettings::default(),
            conversation_id: "default".into(),
            cancel: CancelToken::new(),
        })
    }

    pub fn with_settings(mut self, settings: RuntimeSettings) -> Self {
        self.settings = settings;
        self
    }

    pub fn with_knowledge(mut self, kb: Arc<RwLock<KnowledgeBase<f64>>>) -> Self {
        self.knowledge = Some(kb);
        self
    }

    pub fn with_database(mut self, db: Arc<Database>) -> Self {
        self.database = Some(db);
        self
    }

    /// Same runtime archiving into another conversation.
    pub fn for_conversation(&self, conversation_id: impl Into<String>) -> Self {
        let mut rt = self.clone();
        rt.conversation_id = conversation_id.into();
        rt
    }

    pub fn with_cancel(&self, token: CancelToken) -> Self {
        let mut rt = self.clone();
        rt.cancel = token;
        rt
    }

    pub fn settings(&self) -> &RuntimeSettings {
        &self.settings
    }

    pub fn conversation_id(&self) -> &str {
        &self.conversation_id
    }

    pub fn archive(&self) -> &Arc<dyn Archive> {
        &self.archive
    }

    pub fn database(&self) -> Option<&Arc<Database>> {
        self.database.as_ref()
    }

    pub fn knowledge(&self) -> Option<&Arc<RwLock<KnowledgeBase<f64>>>> {
        self.knowledge.as_ref()
    }

    pub fn profiles(&self) -> impl Iterator<Item = &AgentProfile> {
        self.profiles.values()
    }

    /// First agent, by name, holding `role`.
    pub fn profile_for_role(&self, role: &str) -> Option<&AgentProfile> {
        self.profiles.values().find(|p| p.role == role)
    }

    pub fn roles(&self) -> BTreeSet<&str> {
        self.profiles.values().map(|p| p.role.as_str()).collect()
    }

    pub(crate) fn planner_name(&self) -> &str {
        self.profile_for_role(PLANNER_ROLE).map_or(PLANNER_ROLE, |p| p.name.as_str())
    }

    pub(crate) fn complete(&self, messages: Vec<ChatMessage>) -> Result<ModelResponse, ModelError> {
        if self.cancel.is_cancelled() {
            return Err(ModelError::Cancelled);
        }
        let mut req = ModelRequest::new(self.settings.model.clone(), messages);
        req.temperature = self.settings.temperature;
        req.max_tokens = self.settings.max_tokens;
        self.client.complete(&req)
    }

    pub(crate) fn record(
        &self,
        kind: MessageKind,
        sender: &str,
        receiver: &str,
        content: Value,
    ) -> Result<AgentMessage, AgentError> {
        self.archive.append(&self.conversation_id, kind, sender, receiver, content)
    }
}
