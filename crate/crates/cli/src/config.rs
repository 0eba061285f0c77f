//! The single JSON config file. Every check failure names the file and the
//! line of the offending key.

use std::fmt;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use dbchat_core::rag::{valid_space_name, MIN_MAX_CHARS};
use dbchat_core::smmf::MOCK_ENDPOINT;
use serde::Deserialize;

/// Bundled sales-demo script, usable as a worker's `script_path`.
pub const BUILTIN_DEMO_SCRIPT: &str = "builtin:demo";

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub listen_addr: String,
    pub data_dir: PathBuf,
    pub model: ModelDefaults,
    pub workers: Vec<WorkerConfig>,
    pub knowledge: KnowledgeDefaults,
    /// Space attached to conversations that do not choose one.
    pub knowledge_space: Option<String>,
    pub api_key: Option<String>,
    /// Web client bundle served at `/`.
    pub static_dir: Option<PathBuf>,
    /// SQLite file queried by SQL-backed steps; the demo fixture otherwise.
    pub database: Option<PathBuf>,
    pub chart_via_sql: bool,
    pub max_upload_bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelDefaults {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkerConfig {
    pub model: String,
    pub endpoint: String,
    #[serde(default)]
    pub script_path: Option<String>,
    #[serde(default)]
    pub api_key: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KnowledgeDefaults {
    /// Encoder dimension.
    pub d: usize,
    pub max_chars: usize,
    pub k: usize,
}

impl Default for Config {
    /// Offline setup: one mock worker on the bundled demo script.
    fn default() -> Self {
        Self {
            listen_addr: "127.0.0.1:8080".into(),
            data_dir: PathBuf::from("data"),
            model: ModelDefaults::default(),
            workers: vec![WorkerConfig {
                model: "mock".into(),
                endpoint: MOCK_ENDPOINT.into(),
                script_path: Some(BUILTIN_DEMO_SCRIPT.into()),
                api_key: None,
            }],
            knowledge: KnowledgeDefaults::default(),
            knowledge_space: None,
            api_key: None,
            static_dir: None,
            database: None,
            chart_via_sql: false,
            max_upload_bytes: dbchat_server::DEFAULT_MAX_UPLOAD_BYTES,
        }
    }
}

impl Default for ModelDefaults {
    fn default() -> Self {
        Self { model: "mock".into(), temperature: 0.0, max_tokens: 1024 }
    }
}

impl Default for KnowledgeDefaults {
    fn default() -> Self {
        Self { d: dbchat_core::rag::DEFAULT_DIM, max_chars: dbchat_core::rag::DEFAULT_MAX_CHARS, k: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub path: String,
    pub line: usize,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.path, self.line, self.message)
    }
}

impl std::error::Error for ConfigError {}

/// Line of the `nth` occurrence of `"key"` at or after byte `from`; line 1
/// when the key does not appear (a default value was used).
fn key_line(text: &str, key: &str, from: usize, nth: usize) -> (usize, usize) {
    let needle = format!("\"{key}\"");
    let mut at = from;
    for i in 0..=nth {
        match text[at..].find(&needle) {
            Some(p) if i == nth => {
                let pos = at + p;
                return (text[..pos].matches('\n').count() + 1, pos);
            }
            Some(p) => at += p + needle.len(),
            None => break,
        }
    }
    (1, from)
}

impl Config {
    /// Reads, parses and checks a config file. Relative paths in it are
    /// resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let shown = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
            path: shown.clone(),
            line: 1,
            message: format!("cannot read config: {e}"),
        })?;
        let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        Self::parse(&text, &shown, base)
    }

    pub fn parse(text: &str, shown: &str, base: &Path) -> Result<Self, ConfigError> {
        let mut cfg: Config = serde_json::from_str(text).map_err(|e| ConfigError {
            path: shown.into(),
            line: e.line().max(1),
            message: e.to_string(),
        })?;
        cfg.check(text, shown)?;
        cfg.resolve(base);
        Ok(cfg)
    }

    fn check(&self, text: &str, shown: &str) -> Result<(), ConfigError> {
        let fail = |key: &str, from: usize, nth: usize, message: String| {
            let (line, _) = key_line(text, key, from, nth);
            Err(ConfigError { path: shown.into(), line, message })
        };
        if self.listen_addr.parse::<SocketAddr>().is_err() {
            return fail("listen_addr", 0, 0, format!("listen_addr `{}` is not a host:port address", self.listen_addr));
        }
        if self.model.model.trim().is_empty() {
            return fail("model", 0, 1, "model.model must not be empty".into());
        }
        if !(0.0..=2.0).contains(&self.model.temperature) {
            return fail("temperature", 0, 0, format!("temperature {} is outside 0..=2", self.model.temperature));
        }
        if self.model.max_tokens == 0 {
            return fail("max_tokens", 0, 0, "max_tokens must be at least 1".into());
        }
        if self.workers.is_empty() {
            return fail("workers", 0, 0, "at least one worker is required".into());
        }
        let (_, workers_at) = key_line(text, "workers", 0, 0);
        for (i, w) in self.workers.iter().enumerate() {
            if w.model.trim().is_empty() {
                return fail("model", workers_at, i, format!("workers[{i}].model must not be empty"));
            }
            let is_mock = w.endpoint == MOCK_ENDPOINT;
            if !is_mock && !(w.endpoint.starts_with("http://") || w.endpoint.starts_with("https://")) {
                return fail(
                    "endpoint",
                    workers_at,
                    i,
                    format!("workers[{i}].endpoint must be `{MOCK_ENDPOINT}` or an http(s) URL"),
                );
            }
            if w.script_path.is_some() && !is_mock {
                let nth = self.workers[..i].iter().filter(|w| w.script_path.is_some()).count();
                return fail(
                    "script_path",
                    workers_at,
                    nth,
                    format!("workers[{i}].script_path needs the mock endpoint"),
                );
            }
        }
        let k = &self.knowledge;
        if k.d == 0 {
            return fail("d", 0, 0, "knowledge.d must be at least 1".into());
        }
        if k.max_chars < MIN_MAX_CHARS {
            return fail("max_chars", 0, 0, format!("knowledge.max_chars must be at least {MIN_MAX_CHARS}"));
        }
        if k.k == 0 {
            return fail("k", 0, 0, "knowledge.k must be at least 1".into());
        }
        if let Some(space) = &self.knowledge_space {
            if !valid_space_name(space) {
                return fail("knowledge_space", 0, 0, format!("knowledge_space `{space}` must match [a-z0-9_-]+"));
            }
        }
        if self.max_upload_bytes == 0 {
            return fail("max_upload_bytes", 0, 0, "max_upload_bytes must be at least 1".into());
        }
        Ok(())
    }

    fn resolve(&mut self, base: &Path) {
        let join = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        self.data_dir = join(&self.data_dir);
        self.static_dir = self.static_dir.as_deref().map(join);
        self.database = self.database.as_deref().map(join);
        for w in &mut self.workers {
            if let Some(s) = &w.script_path {
                if s != BUILTIN_DEMO_SCRIPT {
                    w.script_path = Some(join(Path::new(s)).display().to_string());
                }
            }
        }
    }
}
