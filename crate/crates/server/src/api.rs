//! HTTP routes.
//!
//! Error responses share one body shape: `{"error": {"code": ..., "message": ...}}`.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU8, Ordering};
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Multipart, Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chronicle::assistant::{Assistant, Turn};
use chronicle::fusion::FusionParams;
use chronicle::kb::CorpusFormat;
use chronicle::lexical::Scorer;
use chronicle::llm::{ChatGateway, CompletionRequest};
use chronicle::vector::FieldRef;
use chronicle::Error;
use serde::Deserialize;
use serde_json::{json, Value};

/// Gateway wrapper remembering whether the most recent call succeeded.
pub struct TrackedGateway {
    inner: Arc<dyn ChatGateway>,
    /// 0 = no call yet, 1 = last call ok, 2 = last call failed.
    last: AtomicU8,
}

impl TrackedGateway {
    pub fn new(inner: Arc<dyn ChatGateway>) -> Self {
        TrackedGateway { inner, last: AtomicU8::new(0) }
    }

    pub fn last_call_ok(&self) -> Option<bool> {
        match self.last.load(Ordering::Relaxed) {
            1 => Some(true),
            2 => Some(false),
            _ => None,
        }
    }
}

impl ChatGateway for TrackedGateway {
    fn complete(&self, request: &CompletionRequest) -> chronicle::Result<String> {
        let result = self.inner.complete(request);
        self.last.store(if result.is_ok() { 1 } else { 2 }, Ordering::Relaxed);
        result
    }
}

#[derive(Clone)]
pub struct AppState {
    pub assistant: Arc<Assistant>,
    pub gateway: Arc<TrackedGateway>,
    pub gateway_mode: &'static str,
    /// Serializes ingest + reindex.
    pub ingest_lock: Arc<Mutex<()>>,
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/:id", get(get_session))
        .route("/sessions/:id/messages", post(post_message))
        .route("/search", get(search))
        .route("/entries/:id", get(get_entry))
        // default citation links point here
        .route("/entry/:id", get(get_entry))
        .route("/ingest", post(ingest))
        .route("/params", get(default_params))
        .route("/healthz", get(healthz))
        .with_state(state)
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
    turn: Option<Box<Turn>>,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        ApiError { status: StatusCode::BAD_REQUEST, code: "invalid_argument", message: message.into(), turn: None }
    }

    fn internal(message: impl Into<String>) -> Self {
        ApiError { status: StatusCode::INTERNAL_SERVER_ERROR, code: "internal", message: message.into(), turn: None }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let (status, code) = match &e {
            Error::InvalidArgument(_) | Error::MalformedRecord { .. } | Error::EmptyCorpus | Error::Format(_) => {
                (StatusCode::BAD_REQUEST, "invalid_argument")
            }
            Error::Integrity(_) => (StatusCode::BAD_REQUEST, "integrity"),
            Error::NotFound { .. } | Error::UnknownSession(_) => (StatusCode::NOT_FOUND, "not_found"),
            Error::Gateway { .. } | Error::StubMiss(_) | Error::Provider { .. } => {
                (StatusCode::SERVICE_UNAVAILABLE, "gateway_unavailable")
            }
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        ApiError { status, code, message: e.to_string(), turn: None }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": { "code": self.code, "message": self.message } });
        if let Some(turn) = self.turn {
            body["turn"] = serde_json::to_value(turn).unwrap_or(Value::Null);
        }
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> chronicle::Result<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
        .map_err(ApiError::from)
}

async fn create_session(State(state): State<AppState>) -> impl IntoResponse {
    let id = state.assistant.create_session();
    (StatusCode::CREATED, Json(json!({ "id": id })))
}

async fn get_session(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let session = state.assistant.session(&id)?;
    Ok(Json(serde_json::to_value(session).map_err(|e| ApiError::internal(e.to_string()))?))
}

/// Per-request overrides of the configured fusion defaults.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsBody {
    pub alpha: Option<f64>,
    pub gamma: Option<f64>,
    pub k: Option<usize>,
    pub scorer: Option<Scorer>,
    pub fields: Option<Vec<FieldRef>>,
}

impl ParamsBody {
    fn apply(self, base: &FusionParams) -> ApiResult<FusionParams> {
        let p = FusionParams {
            alpha: self.alpha.unwrap_or(base.alpha),
            gamma: self.gamma.unwrap_or(base.gamma),
            k: self.k.unwrap_or(base.k),
            scorer: self.scorer.unwrap_or(base.scorer),
            fields: self.fields.unwrap_or_else(|| base.fields.clone()),
        };
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MessageBody {
    text: String,
    #[serde(default)]
    params: Option<ParamsBody>,
}

async fn post_message(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let body: MessageBody =
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("invalid message body: {e}")))?;
    // unknown sessions are reported before the body is validated further
    state.assistant.session(&id)?;
    let params = body.params.unwrap_or_default().apply(&state.assistant.config().fusion)?;
    let assistant = state.assistant.clone();
    let turn = blocking(move || assistant.handle_turn(&id, &body.text, Some(&params))).await?;
    if turn.degraded {
        return Err(ApiError {
            status: StatusCode::SERVICE_UNAVAILABLE,
            code: "gateway_degraded",
            message: "the answer model is unavailable; the turn was stored with a fallback answer".into(),
            turn: Some(Box::new(turn)),
        });
    }
    Ok(Json(turn).into_response())
}

fn parse_param<T: std::str::FromStr>(q: &HashMap<String, String>, key: &str) -> ApiResult<Option<T>>
where
    T::Err: std::fmt::Display,
{
    q.get(key).map(|v| v.parse::<T>().map_err(|e| ApiError::bad_request(format!("invalid {key}: {e}")))).transpose()
}

async fn search(State(state): State<AppState>, Query(q): Query<HashMap<String, String>>) -> ApiResult<Json<Value>> {
    let text = q.get("q").cloned().unwrap_or_default();
    if text.trim().is_empty() {
        return Err(ApiError::bad_request("missing query parameter q"));
    }
    let params = ParamsBody {
        alpha: parse_param(&q, "alpha")?,
        gamma: parse_param(&q, "gamma")?,
        k: parse_param(&q, "k")?,
        scorer: parse_param(&q, "scorer")?,
        fields: None,
    }
    .apply(&state.assistant.config().fusion)?;
    let arm = q.get("arm").map(String::as_str).unwrap_or("hybrid").to_string();
    let assistant = state.assistant.clone();
    let body = blocking(move || {
        let index = assistant.index();
        let provider = assistant.provider();
        let ranking = |list: Vec<(i64, f64)>| -> Value {
            Value::Array(list.into_iter().map(|(id, score)| json!({ "entry_id": id, "score": score })).collect())
        };
        let result = match arm.as_str() {
            "hybrid" => serde_json::to_value(index.hybrid_search(provider, &text, &params, None)?)?,
            "semantic" => ranking(index.semantic_search(provider, &text, params.k, None)?),
            "lexical" => ranking(index.lexical_search(&text, params.k, params.scorer, None)?),
            other => return Err(Error::InvalidArgument(format!("unknown arm {other:?}"))),
        };
        let key = if arm == "hybrid" { "candidates" } else { "ranking" };
        Ok(json!({ "query": text, "arm": arm, "params": params, key: result }))
    })
    .await?;
    Ok(Json(body))
}

async fn get_entry(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let id: i64 = id.parse().map_err(|_| ApiError::bad_request(format!("entry id must be an integer, got {id:?}")))?;
    let assistant = state.assistant.clone();
    let body = blocking(move || {
        let entry = assistant.kb().get_entry(id)?;
        let author = assistant.kb().get_author(entry.author_id)?;
        let url = entry.url(&assistant.config().url_template);
        let mut value = serde_json::to_value(&entry)?;
        value["url"] = json!(url);
        value["author"] = serde_json::to_value(author)?;
        Ok(value)
    })
    .await?;
    Ok(Json(body))
}

async fn ingest(State(state): State<AppState>, mut multipart: Multipart) -> ApiResult<Json<Value>> {
    let mut data: Option<(Option<String>, Bytes)> = None;
    let mut format: Option<String> = None;
    while let Some(field) = multipart.next_field().await.map_err(|e| ApiError::bad_request(e.to_string()))? {
        match field.name() {
            Some("format") => format = Some(field.text().await.map_err(|e| ApiError::bad_request(e.to_string()))?),
            Some("file") | Some("corpus") => {
                let name = field.file_name().map(str::to_string);
                let bytes = field.bytes().await.map_err(|e| ApiError::bad_request(e.to_string()))?;
                data = Some((name, bytes));
            }
            _ => {}
        }
    }
    let (name, bytes) = data.ok_or_else(|| ApiError::bad_request("multipart body needs a file field"))?;
    let format: CorpusFormat = match (format, name) {
        (Some(f), _) => f.parse()?,
        (None, Some(n)) if n.ends_with(".csv") => CorpusFormat::Csv,
        _ => CorpusFormat::Jsonl,
    };
    let assistant = state.assistant.clone();
    let lock = state.ingest_lock.clone();
    let body = blocking(move || {
        let _guard = lock.lock().expect("ingest lock");
        let counts = assistant.kb().ingest(bytes.as_ref(), format)?;
        assistant.reindex()?;
        Ok(json!({ "entries": counts.entries, "authors": counts.authors, "indexed": assistant.index().len() }))
    })
    .await?;
    Ok(Json(body))
}

async fn default_params(State(state): State<AppState>) -> Json<Value> {
    Json(serde_json::to_value(&state.assistant.config().fusion).unwrap_or(Value::Null))
}

async fn healthz(State(state): State<AppState>) -> ApiResult<Json<Value>> {
    let assistant = state.assistant.clone();
    let counts = blocking(move || assistant.kb().counts()).await?;
    let index = state.assistant.index();
    Ok(Json(json!({
        "status": "ok",
        "store": { "entries": counts.entries, "authors": counts.authors },
        "index": { "entries": index.len(), "embedding_model": index.vectors().model_id() },
        "gateway": { "mode": state.gateway_mode, "last_call_ok": state.gateway.last_call_ok() },
    })))
}
