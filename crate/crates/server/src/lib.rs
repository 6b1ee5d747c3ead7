//! Service wiring for the `chronicle` binary: configuration, store and index
//! loading, and the HTTP router.

pub mod api;
pub mod config;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::sync::{Arc, Mutex};

use chronicle::assistant::{Assistant, AssistantConfig};
use chronicle::fusion::HybridIndex;
use chronicle::lexical::{AnalyzerConfig, InvertedIndex};
use chronicle::vector::{EmbeddingProvider, VectorStore};
use chronicle::KnowledgeBase;

use crate::api::{AppState, TrackedGateway};
use crate::config::{GatewayMode, ServiceConfig};

pub type BoxError = Box<dyn std::error::Error + Send + Sync>;

pub fn open_kb(config: &ServiceConfig) -> Result<KnowledgeBase, BoxError> {
    std::fs::create_dir_all(&config.data_dir)?;
    Ok(KnowledgeBase::open(config.db_path())?)
}

/// Builds both indexes from the store and writes them to the data directory.
pub fn build_and_save_index(
    config: &ServiceConfig,
    kb: &KnowledgeBase,
    provider: &dyn EmbeddingProvider,
) -> Result<HybridIndex, BoxError> {
    let index = HybridIndex::build(kb, provider, AnalyzerConfig::default(), &config.fusion.fields)?;
    if let Some(lexical) = index.lexical() {
        let mut w = BufWriter::new(File::create(config.lexical_path())?);
        lexical.save(&mut w)?;
        w.flush()?;
    }
    let mut w = BufWriter::new(File::create(config.vectors_path())?);
    index.vectors().save(&mut w)?;
    w.flush()?;
    std::fs::write(config.data_dir.join("index.hash"), kb.content_hash()?)?;
    Ok(index)
}

/// Loads saved indexes when they match the store and provider, otherwise rebuilds them.
pub fn load_or_build_index(
    config: &ServiceConfig,
    kb: &KnowledgeBase,
    provider: &dyn EmbeddingProvider,
) -> Result<HybridIndex, BoxError> {
    let saved = (|| -> Result<HybridIndex, BoxError> {
        if std::fs::read_to_string(config.data_dir.join("index.hash"))? != kb.content_hash()? {
            return Err("store changed since the indexes were built".into());
        }
        let vectors = VectorStore::load(&mut BufReader::new(File::open(config.vectors_path())?))?;
        if vectors.model_id() != provider.model_id() {
            return Err("saved vectors come from a different embedding model".into());
        }
        let lexical = match File::open(config.lexical_path()) {
            Ok(f) => Some(InvertedIndex::load(&mut BufReader::new(f))?),
            Err(_) => None,
        };
        Ok(HybridIndex::from_parts(kb, lexical, vectors)?)
    })();
    match saved {
        Ok(index) => Ok(index),
        Err(e) => {
            tracing::info!(reason = %e, "rebuilding indexes");
            build_and_save_index(config, kb, provider)
        }
    }
}

/// Opens the store, loads the indexes and wires the gateway.
pub fn app_state(config: &ServiceConfig) -> Result<AppState, BoxError> {
    let kb = open_kb(config)?;
    let provider = config.provider();
    let index = load_or_build_index(config, &kb, provider.as_ref())?;
    let gateway = Arc::new(TrackedGateway::new(config.gateway()?));
    let assistant_config = AssistantConfig {
        models: config.llm.models.clone(),
        fusion: config.fusion.clone(),
        history_window: config.history_window,
        url_template: config.url_template(),
        ..AssistantConfig::default()
    };
    let assistant = Assistant::new(Arc::new(kb), index, provider, gateway.clone(), assistant_config)?;
    Ok(AppState {
        assistant: Arc::new(assistant),
        gateway,
        gateway_mode: match config.llm.mode {
            GatewayMode::Stub => "stub",
            GatewayMode::Http => "http",
        },
        ingest_lock: Arc::new(Mutex::new(())),
    })
}
