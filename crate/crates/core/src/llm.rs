//! Chat-completion gateway: a remote HTTP client, a scripted stub for tests,
//! and a recording wrapper that writes replayable transcripts.
//!
//! ```
//! use chronicle::llm::{ChatGateway, ChatMessage, CompletionRequest, ScriptedStub};
//!
//! let request = CompletionRequest::new("any-model", vec![ChatMessage::user("ping")]);
//! let stub = ScriptedStub::new().with_reply(&request, "pong");
//! assert_eq!(stub.complete(&request).unwrap(), "pong");
//! ```

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, GatewayErrorKind, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::Assistant, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model_id: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl CompletionRequest {
    /// Request with temperature 0 and a 1024-token cap.
    pub fn new(model_id: impl Into<String>, messages: Vec<ChatMessage>) -> Self {
        CompletionRequest { model_id: model_id.into(), messages, temperature: 0.0, max_tokens: 1024 }
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn with_max_tokens(mut self, max_tokens: u32) -> Self {
        self.max_tokens = max_tokens;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.messages.is_empty() {
            return Err(Error::invalid("completion request has no messages"));
        }
        if self.messages.iter().skip(1).any(|m| m.role == Role::System) {
            return Err(Error::invalid("only the first message may be a system message"));
        }
        if let Some(m) = self.messages.iter().find(|m| m.role != Role::System && m.content.trim().is_empty()) {
            return Err(Error::invalid(format!("{} message has empty content", m.role.as_str())));
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(Error::invalid(format!("temperature must be >= 0, got {}", self.temperature)));
        }
        if self.max_tokens == 0 {
            return Err(Error::invalid("max_tokens must be positive"));
        }
        Ok(())
    }

    /// SHA-256 over the role-tagged message contents, hex encoded.
    ///
    /// Model id and sampling settings are deliberately left out so a script
    /// recorded against one model replays against another.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for m in &self.messages {
            h.update(m.role.as_str().as_bytes());
            h.update([0u8]);
            h.update((m.content.len() as u64).to_le_bytes());
            h.update(m.content.as_bytes());
        }
        hex::encode(h.finalize())
    }
}

pub trait ChatGateway: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<String>;
}

impl<G: ChatGateway + ?Sized> ChatGateway for Arc<G> {
    fn complete(&self, request: &CompletionRequest) -> Result<String> {
        (**self).complete(request)
    }
}

impl<G: ChatGateway + ?Sized> ChatGateway for Box<G> {
    fn complete(&self, request: &CompletionRequest) -> Result<String> {
        (**self).complete(request)
    }
}

/// Model ids for the three pipeline roles.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelRoles {
    pub query_gen: String,
    pub sql_gen: String,
    pub answer_gen: String,
}

impl Default for ModelRoles {
    fn default() -> Self {
        ModelRoles { query_gen: "gpt-4o-mini".into(), sql_gen: "gpt-4o-mini".into(), answer_gen: "gpt-4o".into() }
    }
}

#[derive(Debug, Clone)]
pub struct HttpGatewayConfig {
    /// Full URL of the chat-completions endpoint.
    pub endpoint: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    /// Retries after the first attempt; values above 2 are clamped to 2.
    pub max_retries: u32,
    /// Delay before the first retry; doubles on each subsequent one.
    pub backoff: Duration,
}

impl HttpGatewayConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        HttpGatewayConfig {
            endpoint: endpoint.into(),
            api_key: None,
            timeout: Duration::from_secs(60),
            max_retries: 2,
            backoff: Duration::from_millis(500),
        }
    }
}

/// OpenAI-style chat-completions client.
pub struct HttpGateway {
    config: HttpGatewayConfig,
    agent: ureq::Agent,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    content: Option<String>,
}

pub const MAX_RETRIES: u32 = 2;

impl HttpGateway {
    pub fn new(config: HttpGatewayConfig) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(config.timeout).build();
        HttpGateway { config, agent }
    }

    fn attempt(&self, request: &CompletionRequest) -> Result<String> {
        let body = serde_json::json!({
            "model": request.model_id,
            "messages": request.messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        let mut req = self.agent.post(&self.config.endpoint).set("Content-Type", "application/json");
        if let Some(key) = &self.config.api_key {
            req = req.set("Authorization", &format!("Bearer {key}"));
        }
        let response = req.send_json(body).map_err(classify)?;
        let text = response.into_string().map_err(|e| gateway(classify_io(&e), e.to_string()))?;
        let parsed: WireResponse = serde_json::from_str(&text)
            .map_err(|e| gateway(GatewayErrorKind::BadResponse, format!("unparseable body: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| gateway(GatewayErrorKind::BadResponse, "response has no message content"))
    }
}

fn gateway(kind: GatewayErrorKind, message: impl Into<String>) -> Error {
    Error::Gateway { kind, message: message.into() }
}

fn classify_io(e: &std::io::Error) -> GatewayErrorKind {
    match e.kind() {
        std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock => GatewayErrorKind::Timeout,
        _ => GatewayErrorKind::Network,
    }
}

fn classify(e: ureq::Error) -> Error {
    match e {
        ureq::Error::Status(code, response) => {
            let kind = match code {
                401 | 403 => GatewayErrorKind::Auth,
                429 => GatewayErrorKind::RateLimited,
                500..=599 => GatewayErrorKind::Server,
                _ => GatewayErrorKind::BadResponse,
            };
            let body = response.into_string().unwrap_or_default();
            gateway(kind, format!("HTTP {code}: {}", body.chars().take(200).collect::<String>()))
        }
        ureq::Error::Transport(t) => {
            let io_kind =
                std::error::Error::source(&t).and_then(|s| s.downcast_ref::<std::io::Error>()).map(classify_io);
            let kind = io_kind.unwrap_or_else(|| {
                if t.to_string().contains("timed out") {
                    GatewayErrorKind::Timeout
                } else {
                    GatewayErrorKind::Network
                }
            });
            gateway(kind, t.to_string())
        }
    }
}

impl ChatGateway for HttpGateway {
    fn complete(&self, request: &CompletionRequest) -> Result<String> {
        request.validate()?;
        let retries = self.config.max_retries.min(MAX_RETRIES);
        let mut delay = self.config.backoff;
        let mut attempt = 0;
        loop {
            match self.attempt(request) {
                Ok(text) => return Ok(text),
                Err(Error::Gateway { kind, message }) if kind.is_transient() && attempt < retries => {
                    tracing::warn!(%kind, %message, attempt, "transient gateway failure, retrying");
                    std::thread::sleep(delay);
                    delay *= 2;
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
}

/// Canned outcome for one fingerprint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptedReply {
    Text(String),
    Error { kind: GatewayErrorKind, message: String },
}

impl ScriptedReply {
    fn to_result(&self) -> Result<String> {
        match self {
            ScriptedReply::Text(t) => Ok(t.clone()),
            ScriptedReply::Error { kind, message } => Err(gateway(*kind, message.clone())),
        }
    }
}

/// Deterministic gateway answering from a fingerprint-keyed script.
///
/// A request whose fingerprint is not scripted fails with [`Error::StubMiss`].
#[derive(Debug, Default)]
pub struct ScriptedStub {
    script: BTreeMap<String, ScriptedReply>,
    calls: AtomicUsize,
}

impl ScriptedStub {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_reply(mut self, request: &CompletionRequest, text: impl Into<String>) -> Self {
        self.insert(request.fingerprint(), ScriptedReply::Text(text.into()));
        self
    }

    pub fn with_error(
        mut self,
        request: &CompletionRequest,
        kind: GatewayErrorKind,
        message: impl Into<String>,
    ) -> Self {
        self.insert(request.fingerprint(), ScriptedReply::Error { kind, message: message.into() });
        self
    }

    pub fn insert(&mut self, fingerprint: String, reply: ScriptedReply) {
        self.script.insert(fingerprint, reply);
    }

    /// Script built from a recorded transcript; later records win on duplicate fingerprints.
    pub fn from_transcript(records: &[TranscriptRecord]) -> Self {
        let mut stub = Self::new();
        for r in records {
            stub.insert(r.fingerprint.clone(), r.reply.clone());
        }
        stub
    }

    pub fn len(&self) -> usize {
        self.script.len()
    }

    pub fn is_empty(&self) -> bool {
        self.script.is_empty()
    }

    /// Number of `complete` calls served so far, misses included.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl ChatGateway for ScriptedStub {
    fn complete(&self, request: &CompletionRequest) -> Result<String> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        request.validate()?;
        let fp = request.fingerprint();
        match self.script.get(&fp) {
            Some(reply) => reply.to_result(),
            None => {
                let last = request.messages.last().map(|m| m.content.as_str()).unwrap_or("");
                let preview: String = last.chars().take(80).collect();
                tracing::error!(fingerprint = %fp, %preview, "scripted stub miss");
                Err(Error::StubMiss(fp))
            }
        }
    }
}

/// One request/response pair in a transcript.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub fingerprint: String,
    pub request: CompletionRequest,
    pub reply: ScriptedReply,
}

/// Gateway wrapper that logs every call, optionally appending JSON lines to a file.
pub struct RecordingGateway<G> {
    inner: G,
    records: Mutex<Vec<TranscriptRecord>>,
    sink: Option<Mutex<BufWriter<File>>>,
}

impl<G: ChatGateway> RecordingGateway<G> {
    pub fn new(inner: G) -> Self {
        RecordingGateway { inner, records: Mutex::new(Vec::new()), sink: None }
    }

    /// Appends records to `path`, creating the file (empty) if needed.
    pub fn to_file(inner: G, path: impl AsRef<Path>) -> Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(RecordingGateway { inner, records: Mutex::new(Vec::new()), sink: Some(Mutex::new(BufWriter::new(file))) })
    }

    pub fn records(&self) -> Vec<TranscriptRecord> {
        self.records.lock().expect("transcript lock").clone()
    }

    pub fn into_inner(self) -> G {
        self.inner
    }
}

impl<G: ChatGateway> ChatGateway for RecordingGateway<G> {
    fn complete(&self, request: &CompletionRequest) -> Result<String> {
        let result = self.inner.complete(request);
        let reply = match &result {
            Ok(text) => ScriptedReply::Text(text.clone()),
            Err(Error::Gateway { kind, message }) => ScriptedReply::Error { kind: *kind, message: message.clone() },
            Err(_) => return result,
        };
        let record = TranscriptRecord { fingerprint: request.fingerprint(), request: request.clone(), reply };
        if let Some(sink) = &self.sink {
            let mut w = sink.lock().expect("transcript sink lock");
            serde_json::to_writer(&mut *w, &record)?;
            w.write_all(b"\n")?;
            w.flush()?;
        }
        self.records.lock().expect("transcript lock").push(record);
        result
    }
}

/// Writes `records` as JSON lines, replacing any existing file.
pub fn write_transcript(path: impl AsRef<Path>, records: &[TranscriptRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_transcript(path: impl AsRef<Path>) -> Result<Vec<TranscriptRecord>> {
    let path: PathBuf = path.as_ref().into();
    let reader = BufReader::new(File::open(&path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record =
            serde_json::from_str(&line).map_err(|e| Error::MalformedRecord { line: i + 1, message: e.to_string() })?;
        out.push(record);
    }
    Ok(out)
}
