//! Knowledge base: token accounting, sentence-aware chunking, deterministic
//! feature-hashing embeddings and exact top-k retrieval.
//!
//! The index is immutable once built and can be shared freely between
//! readers. Retrieval is a pure function of the index contents, the query
//! text and `k`.

mod chunker;
mod corpus;
mod embed;
mod index;

pub use chunker::{split_into_chunks, split_with_overlap, ChunkPiece, MIN_CHUNK_SIZE};
pub use corpus::{load_corpus, write_corpus, CorpusManifest, ManifestEntry};
pub use embed::{cosine, embed, feature_slot, word_tokens, EMBEDDER_LIMIT, EMBEDDING_DIM};
pub use index::{build_index, Chunk, KnowledgeIndex, Retrieved, INDEX_FORMAT_VERSION};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Counts tokens as `ceil(chars / 4)`.
pub fn count_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

/// Half-open token range `[start, end)` within a document.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSpan {
    pub start: usize,
    pub end: usize,
}

impl TokenSpan {
    pub fn new(start: usize, end: usize) -> Self {
        debug_assert!(start <= end);
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    /// Number of tokens shared with `other`.
    pub fn overlap(&self, other: &TokenSpan) -> usize {
        let lo = self.start.max(other.start);
        let hi = self.end.min(other.end);
        hi.saturating_sub(lo)
    }

    pub fn contains_span(&self, other: &TokenSpan) -> bool {
        self.start <= other.start && other.end <= self.end
    }
}

/// A source text of the knowledge base.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub title: String,
    pub body: String,
    pub token_count: usize,
}

impl Document {
    pub fn new(id: impl Into<String>, title: impl Into<String>, body: impl Into<String>) -> Self {
        let body = body.into();
        Self {
            id: id.into(),
            title: title.into(),
            token_count: count_tokens(&body),
            body,
        }
    }
}

/// Identifies one chunk of one document.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChunkRef {
    pub doc_id: String,
    pub index: usize,
}

impl std::fmt::Display for ChunkRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}#{}", self.doc_id, self.index)
    }
}

#[derive(Debug, Error)]
pub enum KbError {
    #[error("chunk size {chunk_size} is below the minimum of {min} tokens")]
    ChunkSizeTooSmall { chunk_size: usize, min: usize },

    #[error("embedder input of {tokens} tokens exceeds the {limit}-token limit{}", chunk.as_ref().map(|c| format!(" (chunk {c})")).unwrap_or_default())]
    EmbedderOversize {
        tokens: usize,
        limit: usize,
        chunk: Option<ChunkRef>,
    },

    #[error("retrieval count k must be at least 1")]
    InvalidK,

    #[error("duplicate document id `{0}`")]
    DuplicateDocument(String),

    #[error("unsupported index format version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },

    #[error("corpus manifest: {0}")]
    Manifest(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
