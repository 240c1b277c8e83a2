use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};
use storygraph_core::textgen::{
    ApiKey, BackendError, GenerationRequest, GeneratorBackend, HttpBackend, HttpBackendConfig, TemplateId,
};
use url::Url;

#[derive(Clone, Default)]
struct Stub {
    hits: Arc<AtomicUsize>,
    /// Status codes to answer before succeeding.
    failures: Arc<Vec<u16>>,
    seen_auth: Arc<Mutex<Vec<Option<String>>>>,
    seen_body: Arc<Mutex<Vec<Value>>>,
    malformed: bool,
}

async fn handler(State(stub): State<Stub>, headers: HeaderMap, Json(body): Json<Value>) -> Response {
    let n = stub.hits.fetch_add(1, Ordering::SeqCst);
    stub.seen_auth.lock().unwrap().push(
        headers
            .get("authorization")
            .map(|v| v.to_str().unwrap().to_string()),
    );
    stub.seen_body.lock().unwrap().push(body.clone());
    if let Some(code) = stub.failures.get(n) {
        return (StatusCode::from_u16(*code).unwrap(), "try later").into_response();
    }
    if stub.malformed {
        return (StatusCode::OK, "{not json").into_response();
    }
    let prompt = body["messages"][0]["content"].as_str().unwrap_or_default();
    Json(json!({
        "choices": [{"message": {"role": "assistant", "content": format!("echo: {prompt}")}}],
        "usage": {"prompt_tokens": 11, "completion_tokens": 3}
    }))
    .into_response()
}

fn serve(stub: Stub) -> SocketAddr {
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(1)
            .enable_all()
            .build()
            .unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            let app = Router::new()
                .route("/v1/chat/completions", post(handler))
                .with_state(stub);
            axum::serve(listener, app).await.unwrap();
        });
    });
    rx.recv().unwrap()
}

fn config(addr: SocketAddr) -> HttpBackendConfig {
    let mut c = HttpBackendConfig::new(
        Url::parse(&format!("http://{addr}/v1/chat/completions")).unwrap(),
        "stub-model",
    );
    c.backoff_ms = 10;
    c.timeout_secs = 5;
    c
}

fn request(prompt: &str) -> GenerationRequest {
    GenerationRequest {
        template_id: TemplateId::GenerateScene,
        bindings: BTreeMap::new(),
        prompt: prompt.into(),
        max_output_tokens: 64,
        temperature: 0.8,
    }
}

#[test]
fn retries_server_errors_then_succeeds() {
    let stub = Stub {
        failures: Arc::new(vec![500, 503]),
        ..Stub::default()
    };
    let addr = serve(stub.clone());
    let backend = HttpBackend::with_api_key(config(addr), None).unwrap();
    let out = backend.complete(&request("hello")).unwrap();
    assert_eq!(out.text, "echo: hello");
    assert_eq!(out.usage.prompt_tokens, 11);
    assert_eq!(out.usage.output_tokens, 3);
    assert_eq!(stub.hits.load(Ordering::SeqCst), 3);
    let body = &stub.seen_body.lock().unwrap()[0];
    assert_eq!(body["model"], "stub-model");
    assert_eq!(body["max_tokens"], 64);
    assert_eq!(body["messages"][0]["role"], "user");
    assert!(stub.seen_auth.lock().unwrap().iter().all(Option::is_none));
}

#[test]
fn gives_up_after_max_retries() {
    let stub = Stub {
        failures: Arc::new(vec![429; 10]),
        ..Stub::default()
    };
    let addr = serve(stub.clone());
    let mut c = config(addr);
    c.max_retries = 2;
    let backend = HttpBackend::with_api_key(c, None).unwrap();
    assert!(matches!(
        backend.complete(&request("x")),
        Err(BackendError::Unavailable { .. })
    ));
    assert_eq!(stub.hits.load(Ordering::SeqCst), 3);
}

#[test]
fn client_errors_are_not_retried() {
    let stub = Stub {
        failures: Arc::new(vec![400]),
        ..Stub::default()
    };
    let addr = serve(stub.clone());
    let backend = HttpBackend::with_api_key(config(addr), None).unwrap();
    match backend.complete(&request("x")) {
        Err(BackendError::Rejected { status, .. }) => assert_eq!(status, Some(400)),
        other => panic!("expected rejection, got {other:?}"),
    }
    assert_eq!(stub.hits.load(Ordering::SeqCst), 1);
}

#[test]
fn malformed_json_is_rejected() {
    let stub = Stub {
        malformed: true,
        ..Stub::default()
    };
    let addr = serve(stub.clone());
    let backend = HttpBackend::with_api_key(config(addr), None).unwrap();
    assert!(matches!(
        backend.complete(&request("x")),
        Err(BackendError::Rejected { .. })
    ));
}

#[test]
fn bearer_token_sent_but_never_echoed() {
    let stub = Stub {
        failures: Arc::new(vec![401]),
        ..Stub::default()
    };
    let addr = serve(stub.clone());
    let backend = HttpBackend::with_api_key(config(addr), Some(ApiKey::new("tok-123"))).unwrap();
    let err = backend.complete(&request("x")).unwrap_err();
    assert!(!format!("{err:?} {err}").contains("tok-123"));
    assert_eq!(
        stub.seen_auth.lock().unwrap()[0].as_deref(),
        Some("Bearer tok-123")
    );
}

#[test]
fn unreachable_endpoint_is_unavailable() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    let mut c = config(addr);
    c.max_retries = 1;
    let backend = HttpBackend::with_api_key(c, None).unwrap();
    assert!(matches!(
        backend.complete(&request("x")),
        Err(BackendError::Unavailable { .. })
    ));
}
