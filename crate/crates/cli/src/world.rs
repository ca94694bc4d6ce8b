//! The served corpus, gateway and per-chunk-size index cache shared by the
//! CLI and the HTTP service.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use formulink_core::agent::{start_session, AgentError, FactTarget, IndexRef, SessionState};
use formulink_core::gateway::{Gateway, GatewayError, ModelProfile, RemoteHttpBackend, REMOTE_HTTP_BACKEND, SCRIPTED_BACKEND};
use formulink_core::kb::{build_index, load_corpus, Document, KbError, KnowledgeIndex};
use formulink_core::sim::{generate_corpus, ScriptedBackend};

use crate::config::ServiceConfig;

/// Result of building an index: the index, or the ingest error text.
pub type BuiltIndex = Arc<Result<KnowledgeIndex, String>>;

pub struct World {
    pub label: String,
    pub docs: Vec<Document>,
    pub facts: Vec<FactTarget>,
    pub gateway: Gateway,
    indexes: Mutex<HashMap<usize, BuiltIndex>>,
}

impl World {
    /// Loads the configured corpus and registers the available backends.
    pub fn from_config(cfg: &ServiceConfig) -> Result<Self, WorldError> {
        let mut gateway = Gateway::new();
        let (label, docs, facts) = match &cfg.corpus_dir {
            Some(dir) => {
                let docs = load_corpus(dir)?;
                (dir.display().to_string(), docs, Vec::new())
            }
            None => {
                let (doc, plan) = generate_corpus(cfg.corpus_seed);
                gateway.register_backend(SCRIPTED_BACKEND, Arc::new(ScriptedBackend::new(&plan)))?;
                (
                    format!("synthetic-{}", cfg.corpus_seed),
                    vec![doc],
                    plan.fact_targets(),
                )
            }
        };
        if let Some(base) = &cfg.api_base {
            let remote = RemoteHttpBackend::new(base.clone(), cfg.api_key.clone());
            gateway.register_backend(REMOTE_HTTP_BACKEND, Arc::new(remote))?;
        }
        Ok(Self {
            label,
            docs,
            facts,
            gateway,
            indexes: Mutex::new(HashMap::new()),
        })
    }

    /// Builds (once) and returns the index at `chunk_size`.
    pub fn index(&self, chunk_size: usize) -> BuiltIndex {
        let mut cache = self.indexes.lock().expect("index cache lock");
        cache
            .entry(chunk_size)
            .or_insert_with(|| {
                Arc::new(build_index(&self.docs, chunk_size).map_err(|e| e.to_string()))
            })
            .clone()
    }

    pub fn new_session(
        &self,
        id: String,
        profile: ModelProfile,
        k: usize,
        chunk_size: usize,
    ) -> Result<SessionState, AgentError> {
        let built = self.index(chunk_size);
        let index_ref = IndexRef {
            label: format!("{}-c{chunk_size}", self.label),
            chunk_size,
            ingest_error: built.as_ref().as_ref().err().cloned(),
        };
        start_session(id, profile, index_ref, k, self.facts.clone())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum WorldError {
    #[error(transparent)]
    Kb(#[from] KbError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}
