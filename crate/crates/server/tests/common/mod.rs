#![allow(dead_code)]

pub mod schema;

use std::path::PathBuf;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use chronicle_server::api::{router, AppState};
use chronicle_server::config::ServiceConfig;
use http_body_util::BodyExt;
use serde_json::Value;
use tempfile::TempDir;
use tower::ServiceExt;

pub fn core_data() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/data")
}

pub fn golden_transcript() -> PathBuf {
    core_data().join("e2e/transcript.jsonl")
}

pub fn golden_turns() -> String {
    std::fs::read_to_string(core_data().join("e2e/turns.json")).unwrap()
}

/// The three user messages of the golden session.
pub const E2E_TURNS: [&str; 3] = [
    "What did the diarists write about the weather before 1905?",
    "And in winter?",
    "Who complained about the harvest?",
];

pub struct TestApp {
    pub dir: TempDir,
    pub state: AppState,
    pub router: Router,
}

/// A service over an empty data directory with the given stub script.
pub fn app(stub_script: Option<PathBuf>) -> TestApp {
    let dir = tempfile::tempdir().unwrap();
    let mut config = ServiceConfig { data_dir: dir.path().to_path_buf(), ..ServiceConfig::default() };
    config.llm.stub_script = stub_script;
    let state = chronicle_server::app_state(&config).unwrap();
    TestApp { dir, router: router(state.clone()), state }
}

pub async fn send(router: &Router, request: Request<Body>) -> (StatusCode, Value) {
    let response = router.clone().oneshot(request).await.unwrap();
    let status = response.status();
    let bytes = response.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, value)
}

pub async fn get(router: &Router, uri: &str) -> (StatusCode, Value) {
    send(router, Request::get(uri).body(Body::empty()).unwrap()).await
}

pub async fn post_json(router: &Router, uri: &str, body: &Value) -> (StatusCode, Value) {
    let request =
        Request::post(uri).header("content-type", "application/json").body(Body::from(body.to_string())).unwrap();
    send(router, request).await
}

pub async fn ingest_fixture(router: &Router) -> (StatusCode, Value) {
    let corpus = std::fs::read(core_data().join("fixture_corpus.jsonl")).unwrap();
    let boundary = "chronicle-test-boundary";
    let mut body = Vec::new();
    body.extend_from_slice(
        format!(
            "--{boundary}\r\nContent-Disposition: form-data; name=\"file\"; filename=\"fixture_corpus.jsonl\"\r\n\
             Content-Type: application/x-ndjson\r\n\r\n"
        )
        .as_bytes(),
    );
    body.extend_from_slice(&corpus);
    body.extend_from_slice(format!("\r\n--{boundary}--\r\n").as_bytes());
    let request = Request::post("/ingest")
        .header("content-type", format!("multipart/form-data; boundary={boundary}"))
        .body(Body::from(body))
        .unwrap();
    send(router, request).await
}

pub async fn new_session(router: &Router) -> String {
    let (status, body) = send(router, Request::post("/sessions").body(Body::empty()).unwrap()).await;
    assert_eq!(status, StatusCode::CREATED);
    body["id"].as_str().unwrap().to_string()
}
