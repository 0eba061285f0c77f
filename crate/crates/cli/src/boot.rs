//! Builds the shared pieces (store, gateway, runtime, knowledge spaces)
//! from a checked config.

use std::fmt;
use std::sync::Arc;

use dbchat_core::agents::{default_profiles, AgentRuntime, RuntimeSettings};
use dbchat_core::datachat::Database;
use dbchat_core::demo::demo_script;
use dbchat_core::rag::KnowledgeSpaces;
use dbchat_core::smmf::{Gateway, MockBackend, MockScript, Registry, SystemClock, WorkerSpec, MOCK_ENDPOINT};
use dbchat_core::store::EventStore;
use dbchat_server::ServerOptions;

use crate::config::{Config, BUILTIN_DEMO_SCRIPT};

#[derive(Debug)]
pub struct BootError(pub String);

impl fmt::Display for BootError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for BootError {}

fn fail(what: impl fmt::Display) -> BootError {
    BootError(what.to_string())
}

pub struct App {
    pub store: Arc<EventStore>,
    pub gateway: Arc<Gateway>,
    pub runtime: AgentRuntime,
    pub spaces: Arc<KnowledgeSpaces>,
}

fn load_script(path: &str) -> Result<MockScript, BootError> {
    if path == BUILTIN_DEMO_SCRIPT {
        return Ok(demo_script());
    }
    let text = std::fs::read_to_string(path).map_err(|e| fail(format!("mock script {path}: {e}")))?;
    MockScript::from_json(&text).map_err(|e| fail(format!("mock script {path}: {e}")))
}

pub fn gateway(cfg: &Config) -> Result<Arc<Gateway>, BootError> {
    let gw = Gateway::new(Arc::new(Registry::new(Arc::new(SystemClock))));
    for w in &cfg.workers {
        let spec = WorkerSpec::new(w.model.as_str(), w.endpoint.as_str());
        if w.endpoint == MOCK_ENDPOINT {
            let backend = match &w.script_path {
                Some(p) => MockBackend::new(load_script(p)?),
                None => MockBackend::echo(),
            };
            gw.register(spec, Arc::new(backend)).map_err(fail)?;
        } else {
            gw.register_endpoint(spec, w.api_key.clone()).map_err(fail)?;
        }
    }
    Ok(Arc::new(gw))
}

pub fn build(cfg: &Config) -> Result<App, BootError> {
    std::fs::create_dir_all(&cfg.data_dir).map_err(|e| fail(format!("data dir {}: {e}", cfg.data_dir.display())))?;
    let store = Arc::new(EventStore::open(&cfg.data_dir).map_err(fail)?);
    let gateway = gateway(cfg)?;
    let db = match &cfg.database {
        Some(path) => Database::open(path),
        None => Database::demo(),
    }
    .map_err(|e| fail(format!("database: {e}")))?;
    let settings = RuntimeSettings {
        model: cfg.model.model.clone(),
        temperature: cfg.model.temperature,
        max_tokens: cfg.model.max_tokens,
        chart_via_sql: cfg.chart_via_sql,
        knowledge_k: cfg.knowledge.k,
    };
    let runtime = AgentRuntime::new(default_profiles(), gateway.clone(), store.clone())
        .map_err(fail)?
        .with_settings(settings)
        .with_database(Arc::new(db));
    let spaces = Arc::new(KnowledgeSpaces::new(cfg.data_dir.join("knowledge"), cfg.knowledge.d));
    Ok(App { store, gateway, runtime, spaces })
}

pub fn server_options(cfg: &Config) -> ServerOptions {
    ServerOptions {
        api_key: cfg.api_key.clone(),
        static_dir: cfg.static_dir.clone(),
        max_upload_bytes: cfg.max_upload_bytes,
        knowledge_max_chars: cfg.knowledge.max_chars,
        knowledge_k: cfg.knowledge.k,
        knowledge_space: cfg.knowledge_space.clone(),
    }
}
