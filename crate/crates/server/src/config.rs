//! Service configuration.
//!
//! Values are layered, later layers winning: built-in defaults, a TOML file,
//! environment variables (`LLM_API_KEY`, `LLM_ENDPOINT`, `EMBED_ENDPOINT`),
//! then command-line flags.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use chronicle::fusion::FusionParams;
use chronicle::kb::UrlTemplate;
use chronicle::llm::{read_transcript, ChatGateway, HttpGateway, HttpGatewayConfig, ModelRoles, ScriptedStub};
use chronicle::vector::{EmbeddingProvider, HashingProvider, HttpEmbeddingProvider};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config file {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config file {path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GatewayMode {
    /// Scripted responses only; never touches the network.
    Stub,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmConfig {
    pub mode: GatewayMode,
    pub endpoint: Option<String>,
    pub api_key: Option<String>,
    pub models: ModelRoles,
    pub timeout_secs: u64,
    pub max_retries: u32,
    /// Transcript (JSON lines) loaded into the stub at startup.
    pub stub_script: Option<PathBuf>,
}

impl Default for LlmConfig {
    fn default() -> Self {
        LlmConfig {
            mode: GatewayMode::Stub,
            endpoint: None,
            api_key: None,
            models: ModelRoles::default(),
            timeout_secs: 60,
            max_retries: 2,
            stub_script: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    /// Deterministic local feature hashing.
    Hashing,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingConfig {
    pub provider: ProviderKind,
    pub endpoint: Option<String>,
    pub api_key: Option<String>,
    pub model: String,
    pub dim: usize,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            provider: ProviderKind::Hashing,
            endpoint: None,
            api_key: None,
            model: "text-embedding-3-small".into(),
            dim: HashingProvider::DEFAULT_DIM,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub listen: String,
    /// Base for entry links; `{base_url}/entry/{id}` unless an entry has its own URL.
    pub base_url: String,
    pub data_dir: PathBuf,
    pub llm: LlmConfig,
    pub embedding: EmbeddingConfig,
    pub fusion: FusionParams,
    pub history_window: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            listen: "127.0.0.1:8080".into(),
            base_url: "http://localhost:8080".into(),
            data_dir: PathBuf::from("data"),
            llm: LlmConfig::default(),
            embedding: EmbeddingConfig::default(),
            fusion: FusionParams::default(),
            history_window: 10,
        }
    }
}

/// Flag values; `None` leaves the lower layers untouched.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub listen: Option<String>,
    pub base_url: Option<String>,
    pub data_dir: Option<PathBuf>,
    pub llm_endpoint: Option<String>,
    pub embed_endpoint: Option<String>,
    pub stub_script: Option<PathBuf>,
    pub alpha: Option<f64>,
    pub gamma: Option<f64>,
    pub k: Option<usize>,
    pub scorer: Option<chronicle::lexical::Scorer>,
}

impl ServiceConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
        toml::from_str(&text).map_err(|source| ConfigError::Parse { path: path.into(), source })
    }

    /// Applies environment variables looked up through `var`.
    ///
    /// Setting an endpoint also switches the matching component to HTTP.
    pub fn apply_env(&mut self, var: impl Fn(&str) -> Option<String>) {
        if let Some(key) = var("LLM_API_KEY") {
            self.llm.api_key = Some(key.clone());
            if self.embedding.api_key.is_none() {
                self.embedding.api_key = Some(key);
            }
        }
        if let Some(endpoint) = var("LLM_ENDPOINT") {
            self.llm.endpoint = Some(endpoint);
            self.llm.mode = GatewayMode::Http;
        }
        if let Some(endpoint) = var("EMBED_ENDPOINT") {
            self.embedding.endpoint = Some(endpoint);
            self.embedding.provider = ProviderKind::Http;
        }
    }

    pub fn apply_overrides(&mut self, o: &Overrides) {
        if let Some(v) = &o.listen {
            self.listen = v.clone();
        }
        if let Some(v) = &o.base_url {
            self.base_url = v.clone();
        }
        if let Some(v) = &o.data_dir {
            self.data_dir = v.clone();
        }
        if let Some(v) = &o.llm_endpoint {
            self.llm.endpoint = Some(v.clone());
            self.llm.mode = GatewayMode::Http;
        }
        if let Some(v) = &o.embed_endpoint {
            self.embedding.endpoint = Some(v.clone());
            self.embedding.provider = ProviderKind::Http;
        }
        if let Some(v) = &o.stub_script {
            self.llm.stub_script = Some(v.clone());
            self.llm.mode = GatewayMode::Stub;
        }
        if let Some(v) = o.alpha {
            self.fusion.alpha = v;
        }
        if let Some(v) = o.gamma {
            self.fusion.gamma = v;
        }
        if let Some(v) = o.k {
            self.fusion.k = v;
        }
        if let Some(v) = o.scorer {
            self.fusion.scorer = v;
        }
    }

    /// Defaults, then `file`, then the process environment, then `overrides`.
    pub fn load(file: Option<&Path>, overrides: &Overrides) -> Result<Self, ConfigError> {
        let mut config = match file {
            Some(path) => Self::from_file(path)?,
            None => Self::default(),
        };
        config.apply_env(|k| std::env::var(k).ok().filter(|v| !v.is_empty()));
        config.apply_overrides(overrides);
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.fusion.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.llm.mode == GatewayMode::Http && self.llm.endpoint.is_none() {
            return Err(ConfigError::Invalid("llm.mode = \"http\" needs llm.endpoint".into()));
        }
        if self.embedding.provider == ProviderKind::Http && self.embedding.endpoint.is_none() {
            return Err(ConfigError::Invalid("embedding.provider = \"http\" needs embedding.endpoint".into()));
        }
        if self.history_window == 0 {
            return Err(ConfigError::Invalid("history_window must be positive".into()));
        }
        Ok(())
    }

    pub fn db_path(&self) -> PathBuf {
        self.data_dir.join("chronicle.db")
    }

    pub fn lexical_path(&self) -> PathBuf {
        self.data_dir.join("lexical.idx")
    }

    pub fn vectors_path(&self) -> PathBuf {
        self.data_dir.join("vectors.bin")
    }

    pub fn url_template(&self) -> UrlTemplate {
        UrlTemplate::from_base_url(&self.base_url)
    }

    pub fn provider(&self) -> Arc<dyn EmbeddingProvider> {
        match self.embedding.provider {
            ProviderKind::Hashing => Arc::new(HashingProvider::new(self.embedding.dim, HashingProvider::DEFAULT_SEED)),
            ProviderKind::Http => Arc::new(HttpEmbeddingProvider::new(
                self.embedding.endpoint.clone().unwrap_or_default(),
                self.embedding.api_key.clone(),
                self.embedding.model.clone(),
                self.embedding.dim,
            )),
        }
    }

    pub fn gateway(&self) -> Result<Arc<dyn ChatGateway>, ConfigError> {
        match self.llm.mode {
            GatewayMode::Stub => {
                let stub = match &self.llm.stub_script {
                    Some(path) => {
                        let records = read_transcript(path).map_err(|e| ConfigError::Invalid(e.to_string()))?;
                        ScriptedStub::from_transcript(&records)
                    }
                    None => ScriptedStub::new(),
                };
                Ok(Arc::new(stub))
            }
            GatewayMode::Http => {
                let mut c = HttpGatewayConfig::new(self.llm.endpoint.clone().unwrap_or_default());
                c.api_key = self.llm.api_key.clone();
                c.timeout = Duration::from_secs(self.llm.timeout_secs.max(1));
                c.max_retries = self.llm.max_retries;
                Ok(Arc::new(HttpGateway::new(c)))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_offline_and_valid() {
        let c = ServiceConfig::default();
        c.validate().unwrap();
        assert_eq!(c.llm.mode, GatewayMode::Stub);
        assert_eq!(c.embedding.provider, ProviderKind::Hashing);
    }

    #[test]
    fn precedence_flags_over_env_over_file() {
        let mut c: ServiceConfig = toml::from_str(
            r#"
            listen = "0.0.0.0:9000"
            [llm]
            mode = "http"
            endpoint = "http://file/v1/chat/completions"
            [fusion]
            alpha = 0.5
            "#,
        )
        .unwrap();
        assert_eq!(c.fusion.gamma, 1.0);
        assert_eq!(c.listen, "0.0.0.0:9000");
        c.apply_env(|k| match k {
            "LLM_ENDPOINT" => Some("http://env/v1".into()),
            "LLM_API_KEY" => Some("secret".into()),
            _ => None,
        });
        assert_eq!(c.llm.endpoint.as_deref(), Some("http://env/v1"));
        assert_eq!(c.llm.api_key.as_deref(), Some("secret"));
        c.apply_overrides(&Overrides {
            llm_endpoint: Some("http://flag/v1".into()),
            alpha: Some(0.7),
            ..Default::default()
        });
        assert_eq!(c.llm.endpoint.as_deref(), Some("http://flag/v1"));
        assert_eq!(c.fusion.alpha, 0.7);
        c.validate().unwrap();
    }

    #[test]
    fn http_mode_without_endpoint_is_invalid() {
        let mut c = ServiceConfig::default();
        c.llm.mode = GatewayMode::Http;
        assert!(c.validate().is_err());
        let mut c = ServiceConfig::default();
        c.fusion.k = 0;
        assert!(c.validate().is_err());
    }
}
