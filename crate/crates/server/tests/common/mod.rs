#![allow(dead_code)]

use std::sync::{Arc, Condvar, Mutex};

use dbchat_core::demo::{demo_runtime, demo_script, mock_gateway};
use dbchat_core::rag::KnowledgeSpaces;
use dbchat_core::smmf::{
    Backend, BackendError, Completion, Gateway, MockBackend, MockScript, ModelRequest, Registry, SystemClock,
    WorkerSpec,
};
use dbchat_core::store::EventStore;
use dbchat_server::{AppState, ServerOptions};

pub struct TestServer {
    pub base: String,
    pub state: Arc<AppState>,
    pub dir: tempfile::TempDir,
    pub client: reqwest::Client,
}

impl TestServer {
    pub fn url(&self, path: &str) -> String {
        format!("{}{}", self.base, path)
    }

    pub async fn post_json(&self, path: &str, body: serde_json::Value) -> reqwest::Response {
        self.client.post(self.url(path)).json(&body).send().await.unwrap()
    }

    pub async fn get(&self, path: &str) -> reqwest::Response {
        self.client.get(self.url(path)).send().await.unwrap()
    }

    pub async fn conversation(&self, first: &str) -> String {
        let resp = self.post_json("/api/conversations", serde_json::json!({ "first_message": first })).await;
        assert_eq!(resp.status(), 201);
        resp.json::<serde_json::Value>().await.unwrap()["conversation_id"].as_str().unwrap().to_string()
    }
}

pub async fn start_with(gateway: Arc<Gateway>, options: ServerOptions) -> TestServer {
    let dir = tempfile::tempdir().unwrap();
    let store = Arc::new(EventStore::open(dir.path().join("store")).unwrap());
    let runtime = demo_runtime(gateway.clone(), store.clone()).unwrap();
    let spaces = Arc::new(KnowledgeSpaces::new(dir.path().join("knowledge"), 256));
    let state = AppState::new(store, gateway, runtime, spaces, options);
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    tokio::spawn(dbchat_server::serve(listener, state.clone()));
    TestServer { base, state, dir, client: reqwest::Client::new() }
}

pub async fn start() -> TestServer {
    start_with(mock_gateway(demo_script()), ServerOptions::default()).await
}

pub async fn start_script(script: MockScript) -> TestServer {
    start_with(mock_gateway(script), ServerOptions::default()).await
}

/// One parsed server-sent event.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub event: Option<String>,
    pub data: String,
}

/// Frame parser following the event-stream grammar: blocks separated by a
/// blank line, `field: value` lines, `data` lines joined by newlines.
pub fn parse_sse(text: &str) -> Vec<Frame> {
    let mut frames = Vec::new();
    let mut event = None;
    let mut data: Vec<String> = Vec::new();
    for line in text.split('\n') {
        if line.is_empty() {
            if !data.is_empty() || event.is_some() {
                frames.push(Frame { event: event.take(), data: data.join("\n") });
                data.clear();
            }
            continue;
        }
        let (field, value) = line.split_once(':').unwrap_or((line, ""));
        let value = value.strip_prefix(' ').unwrap_or(value);
        match field {
            "event" => event = Some(value.to_string()),
            "data" => data.push(value.to_string()),
            _ => {}
        }
    }
    assert!(data.is_empty() && event.is_none(), "stream ended inside a frame");
    frames
}

/// Backend that blocks every call until a permit is handed out.
#[derive(Default)]
pub struct GatedBackend {
    inner: Option<MockBackend>,
    permits: Mutex<(usize, usize)>,
    cv: Condvar,
}

impl GatedBackend {
    pub fn new(script: MockScript) -> Self {
        Self { inner: Some(MockBackend::new(script)), ..Self::default() }
    }

    pub fn release(&self, n: usize) {
        self.permits.lock().unwrap().0 += n;
        self.cv.notify_all();
    }

    /// Calls that have started.
    pub fn calls(&self) -> usize {
        self.permits.lock().unwrap().1
    }
}

impl Backend for GatedBackend {
    fn chat(&self, req: &ModelRequest) -> Result<Completion, BackendError> {
        let mut p = self.permits.lock().unwrap();
        p.1 += 1;
        while p.0 == 0 {
            p = self.cv.wait(p).unwrap();
        }
        p.0 -= 1;
        drop(p);
        self.inner.as_ref().unwrap().chat(req)
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError> {
        self.inner.as_ref().unwrap().embed(texts)
    }
}

pub fn gated_gateway(backend: Arc<GatedBackend>) -> Arc<Gateway> {
    let gw = Gateway::new(Arc::new(Registry::new(Arc::new(SystemClock))));
    gw.register(WorkerSpec::new("mock", "internal:mock"), backend).unwrap();
    Arc::new(gw)
}
