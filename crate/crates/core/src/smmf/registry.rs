use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::{Arc, Mutex};

use chrono::{DateTime, TimeDelta, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ModelError, MOCK_ENDPOINT};

pub const DEFAULT_TTL_SECS: i64 = 30;
pub const DEFAULT_FAILURE_THRESHOLD: u32 = 3;

pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// Clock advanced by hand, for tests.
#[derive(Debug)]
pub struct ManualClock(Mutex<DateTime<Utc>>);

impl ManualClock {
    pub fn new(start: DateTime<Utc>) -> Self {
        Self(Mutex::new(start))
    }

    pub fn advance(&self, by: TimeDelta) {
        let mut now = self.0.lock().unwrap();
        *now += by;
    }
}

impl Default for ManualClock {
    fn default() -> Self {
        Self::new(DateTime::UNIX_EPOCH)
    }
}

impl Clock for ManualClock {
    fn now(&self) -> DateTime<Utc> {
        *self.0.lock().unwrap()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Capability {
    Chat,
    Embedding,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WorkerStatus {
    Healthy,
    Unhealthy,
    Expired,
}

/// Registration metadata supplied by a worker.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkerSpec {
    pub model_name: String,
    pub endpoint: String,
    #[serde(default = "default_capabilities")]
    pub capabilities: BTreeSet<Capability>,
}

fn default_capabilities() -> BTreeSet<Capability> {
    BTreeSet::from([Capability::Chat])
}

impl WorkerSpec {
    pub fn new(model_name: impl Into<String>, endpoint: impl Into<String>) -> Self {
        Self { model_name: model_name.into(), endpoint: endpoint.into(), capabilities: default_capabilities() }
    }

    pub fn with_capabilities(mut self, caps: impl IntoIterator<Item = Capability>) -> Self {
        self.capabilities = caps.into_iter().collect();
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkerRecord {
    pub worker_id: String,
    pub model_name: String,
    pub endpoint: String,
    pub capabilities: BTreeSet<Capability>,
    pub last_heartbeat: DateTime<Utc>,
    pub consecutive_failures: u32,
    pub status: WorkerStatus,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RegistryError {
    #[error("invalid endpoint `{0}`")]
    InvalidEndpoint(String),
    #[error("invalid model name")]
    InvalidModelName,
    #[error("unknown worker `{0}`")]
    UnknownWorker(String),
}

#[derive(Debug)]
struct Entry {
    seq: u64,
    record: WorkerRecord,
}

#[derive(Debug, Default)]
struct State {
    // keyed by worker id; selection order uses `seq`
    workers: HashMap<String, Entry>,
    cursors: HashMap<String, usize>,
    next_seq: u64,
}

/// Controller-side worker metadata: registration, heartbeats, health and
/// round-robin selection.
pub struct Registry {
    clock: Arc<dyn Clock>,
    ttl: TimeDelta,
    failure_threshold: u32,
    state: Mutex<State>,
}

impl std::fmt::Debug for Registry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Registry")
            .field("ttl", &self.ttl)
            .field("failure_threshold", &self.failure_threshold)
            .finish_non_exhaustive()
    }
}

impl Default for Registry {
    fn default() -> Self {
        Self::new(Arc::new(SystemClock))
    }
}

impl Registry {
    pub fn new(clock: Arc<dyn Clock>) -> Self {
        Self::with_policy(clock, TimeDelta::seconds(DEFAULT_TTL_SECS), DEFAULT_FAILURE_THRESHOLD)
    }

    pub fn with_policy(clock: Arc<dyn Clock>, ttl: TimeDelta, failure_threshold: u32) -> Self {
        Self { clock, ttl, failure_threshold, state: Mutex::default() }
    }

    pub fn now(&self) -> DateTime<Utc> {
        self.clock.now()
    }

    fn status_of(&self, rec: &WorkerRecord, now: DateTime<Utc>) -> WorkerStatus {
        if now - rec.last_heartbeat > self.ttl {
            WorkerStatus::Expired
        } else if rec.consecutive_failures >= self.failure_threshold {
            WorkerStatus::Unhealthy
        } else {
            WorkerStatus::Healthy
        }
    }

    fn snapshot(&self, rec: &WorkerRecord, now: DateTime<Utc>) -> WorkerRecord {
        let mut out = rec.clone();
        out.status = self.status_of(rec, now);
        out
    }

    /// Registers a worker, or refreshes the existing record for the same
    /// (endpoint, model) pair with counters reset.
    pub fn register(&self, spec: WorkerSpec) -> Result<String, RegistryError> {
        if spec.model_name.trim().is_empty() {
            return Err(RegistryError::InvalidModelName);
        }
        validate_endpoint(&spec.endpoint)?;
        let now = self.clock.now();
        let mut st = self.state.lock().unwrap();
        if let Some(entry) = st
            .workers
            .values_mut()
            .find(|e| e.record.endpoint == spec.endpoint && e.record.model_name == spec.model_name)
        {
            entry.record.capabilities = spec.capabilities;
            entry.record.last_heartbeat = now;
            entry.record.consecutive_failures = 0;
            entry.record.status = WorkerStatus::Healthy;
            return Ok(entry.record.worker_id.clone());
        }
        st.next_seq += 1;
        let seq = st.next_seq;
        let worker_id = format!("w{seq}");
        let record = WorkerRecord {
            worker_id: worker_id.clone(),
            model_name: spec.model_name,
            endpoint: spec.endpoint,
            capabilities: spec.capabilities,
            last_heartbeat: now,
            consecutive_failures: 0,
            status: WorkerStatus::Healthy,
        };
        st.workers.insert(worker_id.clone(), Entry { seq, record });
        Ok(worker_id)
    }

    pub fn heartbeat(&self, worker_id: &str) -> Result<(), RegistryError> {
        let now = self.clock.now();
        let mut st = self.state.lock().unwrap();
        let entry = st.workers.get_mut(worker_id).ok_or_else(|| RegistryError::UnknownWorker(worker_id.to_string()))?;
        entry.record.last_heartbeat = now;
        Ok(())
    }

    pub fn get(&self, worker_id: &str) -> Option<WorkerRecord> {
        let now = self.clock.now();
        let st = self.state.lock().unwrap();
        st.workers.get(worker_id).map(|e| self.snapshot(&e.record, now))
    }

    /// All workers in registration order, with status evaluated now.
    pub fn workers(&self) -> Vec<WorkerRecord> {
        let now = self.clock.now();
        let st = self.state.lock().unwrap();
        let mut entries: Vec<&Entry> = st.workers.values().collect();
        entries.sort_by_key(|e| e.seq);
        entries.into_iter().map(|e| self.snapshot(&e.record, now)).collect()
    }

    /// Workers grouped by model name.
    pub fn models(&self) -> BTreeMap<String, Vec<WorkerRecord>> {
        let mut out: BTreeMap<String, Vec<WorkerRecord>> = BTreeMap::new();
        for rec in self.workers() {
            out.entry(rec.model_name.clone()).or_default().push(rec);
        }
        out
    }

    /// Round-robin over healthy chat workers of `model`.
    pub fn select(&self, model: &str) -> Result<WorkerRecord, ModelError> {
        self.select_excluding(model, Capability::Chat, &[])
    }

    /// Round-robin over healthy workers of `model` with `capability`, skipping
    /// the ids in `exclude`. The per-model cursor advances on every pick.
    pub fn select_excluding(
        &self,
        model: &str,
        capability: Capability,
        exclude: &[String],
    ) -> Result<WorkerRecord, ModelError> {
        let now = self.clock.now();
        let mut st = self.state.lock().unwrap();
        let mut candidates: Vec<&Entry> = st
            .workers
            .values()
            .filter(|e| {
                e.record.model_name == model
                    && e.record.capabilities.contains(&capability)
                    && self.status_of(&e.record, now) == WorkerStatus::Healthy
                    && !exclude.contains(&e.record.worker_id)
            })
            .collect();
        if candidates.is_empty() {
            return Err(ModelError::NoWorkerAvailable(model.to_string()));
        }
        candidates.sort_by_key(|e| e.seq);
        let cursor_key = format!("{model}\u{0}{capability:?}");
        let cursor = st.cursors.get(&cursor_key).copied().unwrap_or(0);
        let picked = self.snapshot(&candidates[cursor % candidates.len()].record, now);
        st.cursors.insert(cursor_key, cursor.wrapping_add(1));
        Ok(picked)
    }

    pub fn record_failure(&self, worker_id: &str) {
        let mut st = self.state.lock().unwrap();
        if let Some(e) = st.workers.get_mut(worker_id) {
            e.record.consecutive_failures = e.record.consecutive_failures.saturating_add(1);
        }
    }

    pub fn record_success(&self, worker_id: &str) {
        let mut st = self.state.lock().unwrap();
        if let Some(e) = st.workers.get_mut(worker_id) {
            e.record.consecutive_failures = 0;
        }
    }
}

fn validate_endpoint(endpoint: &str) -> Result<(), RegistryError> {
    if endpoint == MOCK_ENDPOINT {
        return Ok(());
    }
    let ok = match endpoint.split_once("://") {
        Some((scheme, rest)) => {
            matches!(scheme, "http" | "https")
                && !rest.is_empty()
                && !rest.starts_with('/')
                && !rest.chars().any(char::is_whitespace)
        }
        None => false,
    };
    if ok {
        Ok(())
    } else {
        Err(RegistryError::InvalidEndpoint(endpoint.to_string()))
    }
}
