//! HTTP routes over a temporary data directory with scripted gateways.

mod common;

use axum::http::StatusCode;
use chronicle::assistant::Turn;
use common::schema::Schemas;
use common::*;
use serde_json::json;

#[tokio::test]
async fn healthz_reports_components_without_network() {
    let app = app(None);
    let (status, body) = get(&app.router, "/healthz").await;
    assert_eq!(status, StatusCode::OK);
    Schemas::load().assert_valid("healthz.schema.json", &body);
    assert_eq!(body["store"]["entries"], 0);
    assert_eq!(body["gateway"]["mode"], "stub");
    assert!(body["gateway"]["last_call_ok"].is_null());
    assert!(body["index"]["embedding_model"].as_str().unwrap().starts_with("hashing-64-"));
}

#[tokio::test]
async fn params_expose_server_defaults() {
    let app = app(None);
    let (status, body) = get(&app.router, "/params").await;
    assert_eq!(status, StatusCode::OK);
    Schemas::load().assert_valid("params.schema.json", &body);
    assert_eq!(body, json!({ "alpha": 0.9, "gamma": 1.0, "k": 5, "fields": ["authors.bio"], "scorer": "tfidf" }));
}

#[tokio::test]
async fn unknown_session_is_404() {
    let app = app(None);
    let (status, body) = post_json(&app.router, "/sessions/nope/messages", &json!({ "text": "hello" })).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    Schemas::load().assert_valid("error.schema.json", &body);
    assert_eq!(body["error"]["code"], "not_found");
    let (status, _) = get(&app.router, "/sessions/nope").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn invalid_input_is_400() {
    let app = app(None);
    ingest_fixture(&app.router).await;
    let id = new_session(&app.router).await;
    let schemas = Schemas::load();
    for body in [json!({ "text": "" }), json!({ "text": "x", "params": { "alpha": 1.5 } }), json!({ "txt": "x" })] {
        let (status, err) = post_json(&app.router, &format!("/sessions/{id}/messages"), &body).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{body}");
        schemas.assert_valid("error.schema.json", &err);
    }
    for uri in ["/search", "/search?q=frost&k=0", "/search?q=frost&arm=other", "/entries/abc"] {
        let (status, _) = get(&app.router, uri).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{uri}");
    }
    let (status, _) = get(&app.router, "/entries/999").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn search_alpha_one_matches_semantic_order_without_gateway() {
    let app = app(None);
    let (status, counts) = ingest_fixture(&app.router).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(counts, json!({ "entries": 14, "authors": 4, "indexed": 14 }));
    let schemas = Schemas::load();
    for q in ["snow%20frost%20winter", "harvest%20grain", "war%20hospital"] {
        let (status, hybrid) = get(&app.router, &format!("/search?q={q}&alpha=1")).await;
        assert_eq!(status, StatusCode::OK);
        schemas.assert_valid("search.schema.json", &hybrid);
        let (_, semantic) = get(&app.router, &format!("/search?q={q}&arm=semantic")).await;
        schemas.assert_valid("search.schema.json", &semantic);
        let ids = |v: &serde_json::Value, key: &str| -> Vec<i64> {
            v[key].as_array().unwrap().iter().map(|c| c["entry_id"].as_i64().unwrap()).collect()
        };
        assert_eq!(ids(&hybrid, "candidates"), ids(&semantic, "ranking"), "{q}");
    }
    let (_, lexical) = get(&app.router, "/search?q=harvest&arm=lexical&scorer=bm25").await;
    schemas.assert_valid("search.schema.json", &lexical);
    assert_eq!(lexical["params"]["scorer"], "bm25");
    assert!(app.state.gateway.last_call_ok().is_none(), "/search reached the gateway");
}

#[tokio::test]
async fn entry_route_backs_the_source_panel() {
    let app = app(None);
    ingest_fixture(&app.router).await;
    let (status, body) = get(&app.router, "/entries/5").await;
    assert_eq!(status, StatusCode::OK);
    Schemas::load().assert_valid("entry.schema.json", &body);
    assert_eq!(body["url"], "https://archive.example.org/diaries/orlov/1903-02-09");
    assert_eq!(body["author"]["name"], "Pavel Orlov");
    let (_, other) = get(&app.router, "/entries/1").await;
    assert_eq!(other["url"], "http://localhost:8080/entry/1");
    // the default citation link resolves to the same record
    let (status, linked) = get(&app.router, "/entry/1").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(linked, other);
}

#[tokio::test]
async fn scripted_session_over_http_matches_golden_turns() {
    let app = app(Some(golden_transcript()));
    let (status, ingest) = ingest_fixture(&app.router).await;
    assert_eq!(status, StatusCode::OK);
    Schemas::load().assert_valid("ingest.schema.json", &ingest);
    let id = new_session(&app.router).await;
    let schemas = Schemas::load();
    let mut turns = Vec::new();
    for text in E2E_TURNS {
        let (status, body) =
            post_json(&app.router, &format!("/sessions/{id}/messages"), &json!({ "text": text })).await;
        assert_eq!(status, StatusCode::OK, "{body}");
        schemas.assert_valid("turn.schema.json", &body);
        turns.push(serde_json::from_value::<Turn>(body).unwrap());
    }
    let rendered = serde_json::to_string_pretty(&turns).unwrap() + "\n";
    assert_eq!(rendered, golden_turns());

    let (status, session) = get(&app.router, &format!("/sessions/{id}")).await;
    assert_eq!(status, StatusCode::OK);
    schemas.assert_valid("session.schema.json", &session);
    assert_eq!(session["turns"].as_array().unwrap().len(), 3);
    assert_eq!(app.state.gateway.last_call_ok(), Some(true));
}

#[tokio::test]
async fn unavailable_gateway_is_503_with_the_stored_turn() {
    // an empty script misses every call
    let app = app(None);
    ingest_fixture(&app.router).await;
    let id = new_session(&app.router).await;
    let (status, body) =
        post_json(&app.router, &format!("/sessions/{id}/messages"), &json!({ "text": "frost at the station" })).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    Schemas::load().assert_valid("error.schema.json", &body);
    assert_eq!(body["error"]["code"], "gateway_degraded");
    assert_eq!(body["turn"]["degraded"], true);
    assert!(!body["turn"]["citations"].as_array().unwrap().is_empty());
    let (_, session) = get(&app.router, &format!("/sessions/{id}")).await;
    assert_eq!(session["turns"].as_array().unwrap().len(), 1);
    assert_eq!(app.state.gateway.last_call_ok(), Some(false));
}

#[tokio::test]
async fn ingest_rejects_malformed_corpus() {
    let app = app(None);
    let request = axum::http::Request::post("/ingest")
        .header("content-type", "multipart/form-data; boundary=b")
        .body(axum::body::Body::from(
            "--b\r\nContent-Disposition: form-data; name=\"file\"; filename=\"x.jsonl\"\r\n\r\n{not json}\r\n--b--\r\n",
        ))
        .unwrap();
    let (status, body) = send(&app.router, request).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    Schemas::load().assert_valid("error.schema.json", &body);
    let (_, health) = get(&app.router, "/healthz").await;
    assert_eq!(health["store"]["entries"], 0);
}

#[test]
fn every_schema_file_is_understood_by_the_checker() {
    let schemas = Schemas::load();
    assert!(schemas.names().len() >= 10);
    // a structurally wrong turn is caught
    let errors = schemas.check("turn.schema.json", &json!({ "user_text": "", "extra": 1 }));
    assert!(errors.iter().any(|e| e.contains("missing")));
    assert!(errors.iter().any(|e| e.contains("unexpected property extra")));
    assert!(errors.iter().any(|e| e.contains("shorter")));
    // a request body the UI would send
    schemas.assert_valid("message-request.schema.json", &json!({ "text": "hi", "params": { "alpha": 1.0, "k": 3 } }));
    assert!(!schemas.check("message-request.schema.json", &json!({ "text": "hi", "params": { "k": 0 } })).is_empty());
}
