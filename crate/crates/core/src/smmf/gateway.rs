use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use super::backend::{Backend, BackendError, Completion, MockBackend, RemoteBackend};
use super::registry::{Capability, Registry, RegistryError, WorkerRecord, WorkerSpec};
use super::{ModelClient, ModelError, ModelRequest, ModelResponse, MOCK_ENDPOINT};

/// Routes requests to registered workers.
///
/// Selection is round-robin over healthy workers of the requested model. A
/// transport failure bumps the worker's failure counter and the request is
/// retried on the next healthy worker not yet tried.
pub struct Gateway {
    registry: Arc<Registry>,
    backends: RwLock<HashMap<String, Arc<dyn Backend>>>,
    requests: AtomicU64,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("registry", &self.registry)
            .field("requests", &self.requests)
            .finish_non_exhaustive()
    }
}

impl Default for Gateway {
    fn default() -> Self {
        Self::new(Arc::new(Registry::default()))
    }
}

impl Gateway {
    pub fn new(registry: Arc<Registry>) -> Self {
        Self { registry, backends: RwLock::default(), requests: AtomicU64::new(0) }
    }

    pub fn registry(&self) -> &Arc<Registry> {
        &self.registry
    }

    /// Registers a worker together with the backend that serves it.
    pub fn register(&self, spec: WorkerSpec, backend: Arc<dyn Backend>) -> Result<String, RegistryError> {
        let id = self.registry.register(spec)?;
        self.backends.write().unwrap().insert(id.clone(), backend);
        Ok(id)
    }

    /// Registers a worker by endpoint alone: `internal:mock` gets an echoing
    /// mock, HTTP(S) URLs an OpenAI-compatible remote backend.
    pub fn register_endpoint(&self, spec: WorkerSpec, api_key: Option<String>) -> Result<String, RegistryError> {
        let backend: Arc<dyn Backend> = if spec.endpoint == MOCK_ENDPOINT {
            Arc::new(MockBackend::echo())
        } else {
            Arc::new(RemoteBackend::new(spec.endpoint.clone(), api_key))
        };
        // validate before replacing a backend for an existing worker
        let id = self.registry.register(spec)?;
        self.backends.write().unwrap().entry(id.clone()).or_insert(backend);
        Ok(id)
    }

    /// Number of requests that reached the routing stage.
    pub fn request_count(&self) -> u64 {
        self.requests.load(Ordering::SeqCst)
    }

    fn backend(&self, worker_id: &str) -> Option<Arc<dyn Backend>> {
        self.backends.read().unwrap().get(worker_id).cloned()
    }

    fn route<T>(
        &self,
        model: &str,
        capability: Capability,
        mut call: impl FnMut(&dyn Backend) -> Result<T, BackendError>,
    ) -> Result<(T, WorkerRecord), ModelError> {
        self.requests.fetch_add(1, Ordering::SeqCst);
        let mut tried: Vec<String> = Vec::new();
        loop {
            let worker = match self.registry.select_excluding(model, capability, &tried) {
                Ok(w) => w,
                Err(e) if tried.is_empty() => return Err(e),
                Err(_) => return Err(ModelError::AllWorkersFailed { model: model.to_string(), attempts: tried.len() }),
            };
            let result = match self.backend(&worker.worker_id) {
                Some(backend) => call(backend.as_ref()),
                None => Err(BackendError::Transport("no backend attached".into())),
            };
            match result {
                Ok(value) => {
                    self.registry.record_success(&worker.worker_id);
                    return Ok((value, worker));
                }
                Err(BackendError::Transport(cause)) => {
                    log::warn!("worker {} failed: {cause}", worker.worker_id);
                    self.registry.record_failure(&worker.worker_id);
                    tried.push(worker.worker_id);
                }
                Err(BackendError::Unsupported(cause)) => return Err(ModelError::Backend(cause)),
            }
        }
    }

    fn finish(req: &ModelRequest, completion: Completion, worker: WorkerRecord) -> ModelResponse {
        ModelResponse {
            content: completion.content,
            model: req.model.clone(),
            finish_reason: completion.finish_reason,
            usage: completion.usage,
            worker_id: worker.worker_id,
        }
    }

    pub fn chat_completion(&self, req: &ModelRequest) -> Result<ModelResponse, ModelError> {
        req.validate()?;
        let (completion, worker) = self.route(&req.model, Capability::Chat, |b| b.chat(req))?;
        Ok(Self::finish(req, completion, worker))
    }

    /// Streams content deltas; their concatenation equals the returned
    /// response's content.
    pub fn chat_completion_stream(
        &self,
        req: &ModelRequest,
        on_delta: &mut dyn FnMut(&str),
    ) -> Result<ModelResponse, ModelError> {
        req.validate()?;
        let (completion, worker) = self.route(&req.model, Capability::Chat, |b| b.chat_stream(req, &mut *on_delta))?;
        Ok(Self::finish(req, completion, worker))
    }

    pub fn embed(&self, texts: &[String], model: &str) -> Result<Vec<Vec<f64>>, ModelError> {
        let (vectors, _) = self.route(model, Capability::Embedding, |b| b.embed(texts))?;
        if vectors.len() != texts.len() {
            return Err(ModelError::Backend(format!("expected {} embeddings, got {}", texts.len(), vectors.len())));
        }
        Ok(vectors)
    }
}

impl ModelClient for Gateway {
    fn complete(&self, req: &ModelRequest) -> Result<ModelResponse, ModelError> {
        self.chat_completion(req)
    }
}
