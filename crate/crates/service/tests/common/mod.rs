#![allow(dead_code)]

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::Value;
use storygraph_core::pipeline::Phase;
use storygraph_core::textgen::{
    BackendError, GenerationParams, GenerationRequest, GenerationResult, GeneratorBackend, TemplateId, TemplateSet,
};
use storygraph_service::{scripted_backend, AppState, Session, SessionStore, SpecDefaults};
use tower::ServiceExt;

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn script_backend() -> Arc<dyn GeneratorBackend> {
    scripted_backend(&fixture("script.json")).unwrap()
}

/// Wraps a backend and holds calls for the gated templates until `release`.
pub struct GateBackend {
    inner: Arc<dyn GeneratorBackend>,
    gated: HashSet<TemplateId>,
    open: Mutex<bool>,
    opened: Condvar,
    waiting: Mutex<usize>,
}

impl GateBackend {
    pub fn new(inner: Arc<dyn GeneratorBackend>, gated: &[TemplateId]) -> Arc<Self> {
        Arc::new(Self {
            inner,
            gated: gated.iter().copied().collect(),
            open: Mutex::new(false),
            opened: Condvar::new(),
            waiting: Mutex::new(0),
        })
    }

    pub fn release(&self) {
        *self.open.lock().unwrap() = true;
        self.opened.notify_all();
    }

    pub fn close(&self) {
        *self.open.lock().unwrap() = false;
    }

    pub fn waiting(&self) -> usize {
        *self.waiting.lock().unwrap()
    }
}

impl GeneratorBackend for GateBackend {
    fn id(&self) -> &str {
        "gate"
    }

    fn complete(&self, request: &GenerationRequest) -> Result<GenerationResult, BackendError> {
        if self.gated.contains(&request.template_id) {
            *self.waiting.lock().unwrap() += 1;
            let mut open = self.open.lock().unwrap();
            while !*open {
                open = self.opened.wait(open).unwrap();
            }
            drop(open);
            *self.waiting.lock().unwrap() -= 1;
        }
        self.inner.complete(request)
    }
}

pub fn app_with(dir: &Path, backend: Arc<dyn GeneratorBackend>) -> Arc<AppState> {
    let store = SessionStore::open(dir).unwrap();
    AppState::new(
        store,
        backend,
        TemplateSet::defaults(),
        GenerationParams::default(),
        SpecDefaults::default(),
    )
}

pub async fn call(router: &Router, method: &str, uri: &str, body: Option<&str>) -> (StatusCode, Value) {
    let request = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or_else(Body::empty, |b| Body::from(b.to_string())))
        .unwrap();
    let response = router.clone().oneshot(request).await.unwrap();
    let status = response.status();
    let bytes = response.into_body().collect().await.unwrap().to_bytes();
    let value = serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()));
    (status, value)
}

/// Poll until the session reaches `want` with no job running.
pub async fn wait_idle_in(session: &Session, want: impl Fn(Phase) -> bool) -> Phase {
    let deadline = Instant::now() + Duration::from_secs(10);
    loop {
        let phase = session.phase();
        if want(phase) && !session.is_busy() {
            return phase;
        }
        assert!(
            Instant::now() < deadline,
            "timed out in {phase}, last error {:?}",
            session.data().last_error
        );
        tokio::time::sleep(Duration::from_millis(5)).await;
    }
}

pub async fn wait_until(mut cond: impl FnMut() -> bool) {
    let deadline = Instant::now() + Duration::from_secs(10);
    while !cond() {
        assert!(Instant::now() < deadline, "timed out");
        tokio::time::sleep(Duration::from_millis(2)).await;
    }
}

pub fn awaiting(p: Phase) -> bool {
    matches!(p, Phase::AwaitingEdit(_))
}

pub const SPEC: &str = r#"{"title":"The Harbor Ledger","genre":"mystery","protagonists":"Mara and Ivo","description":"A missing ledger."}"#;

pub fn spec_with(extra: &str) -> String {
    format!("{},{extra}}}", &SPEC[..SPEC.len() - 1])
}
