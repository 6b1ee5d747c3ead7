use std::fmt;

/// Convenience alias used across the crate.
pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failure categories reported by chat and embedding backends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GatewayErrorKind {
    Network,
    Timeout,
    Auth,
    RateLimited,
    Server,
    BadResponse,
}

impl GatewayErrorKind {
    /// Transient failures are worth retrying; the rest are not.
    pub fn is_transient(self) -> bool {
        matches!(
            self,
            GatewayErrorKind::Network
                | GatewayErrorKind::Timeout
                | GatewayErrorKind::RateLimited
                | GatewayErrorKind::Server
        )
    }
}

impl fmt::Display for GatewayErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            GatewayErrorKind::Network => "network",
            GatewayErrorKind::Timeout => "timeout",
            GatewayErrorKind::Auth => "auth",
            GatewayErrorKind::RateLimited => "rate_limited",
            GatewayErrorKind::Server => "server",
            GatewayErrorKind::BadResponse => "bad_response",
        };
        f.write_str(s)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{kind} {id} not found")]
    NotFound { kind: &'static str, id: i64 },

    #[error("session {0} not found")]
    UnknownSession(String),

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("malformed record at line {line}: {message}")]
    MalformedRecord { line: usize, message: String },

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("embedding provider error: {message}")]
    Provider { message: String, retryable: bool },

    #[error("indexing stopped after {completed} records: {source}")]
    PartialProgress {
        completed: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("gateway error ({kind}): {message}")]
    Gateway { kind: GatewayErrorKind, message: String },

    #[error("scripted stub has no response for fingerprint {0}")]
    StubMiss(String),

    #[error("no SQL could be extracted from the completion")]
    ExtractionFailed,

    #[error("query was not accepted by the SQL guard: {0}")]
    NotValidated(String),

    #[error("SQL execution failed: {0}")]
    ExecutionFailed(String),

    #[error("undefined result: {0}")]
    Undefined(String),

    #[error("unsupported file format: {0}")]
    Format(String),

    #[error("storage error: {0}")]
    Storage(#[from] rusqlite::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for errors raised by the chat gateway (including stub misses).
    pub fn is_gateway(&self) -> bool {
        matches!(self, Error::Gateway { .. } | Error::StubMiss(_))
    }
}
