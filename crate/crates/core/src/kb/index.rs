use std::cmp::Ordering;
use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    embed, split_into_chunks, ChunkRef, Document, KbError, TokenSpan, EMBEDDER_LIMIT,
    EMBEDDING_DIM,
};

pub const INDEX_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chunk {
    pub doc_id: String,
    pub index: usize,
    pub text: String,
    pub token_span: TokenSpan,
    pub embedding: Vec<f64>,
}

impl Chunk {
    pub fn chunk_ref(&self) -> ChunkRef {
        ChunkRef {
            doc_id: self.doc_id.clone(),
            index: self.index,
        }
    }
}

/// One retrieval hit.
#[derive(Debug, Clone, Copy)]
pub struct Retrieved<'a> {
    pub chunk: &'a Chunk,
    /// Position of the chunk in index order (document order, then chunk order).
    pub position: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeIndex {
    pub version: u32,
    pub chunk_size: usize,
    pub embedding_dim: usize,
    pub embedder_limit: usize,
    pub chunks: Vec<Chunk>,
}

/// Chunks and embeds every document in order. The first chunk the embedder
/// rejects aborts the build.
pub fn build_index(docs: &[Document], chunk_size: usize) -> Result<KnowledgeIndex, KbError> {
    let mut seen = HashSet::new();
    let mut chunks = Vec::new();
    for doc in docs {
        if !seen.insert(doc.id.as_str()) {
            return Err(KbError::DuplicateDocument(doc.id.clone()));
        }
        for (index, piece) in split_into_chunks(&doc.body, chunk_size)?.into_iter().enumerate() {
            let embedding = embed(&piece.text).map_err(|e| match e {
                KbError::EmbedderOversize { tokens, limit, .. } => KbError::EmbedderOversize {
                    tokens,
                    limit,
                    chunk: Some(ChunkRef {
                        doc_id: doc.id.clone(),
                        index,
                    }),
                },
                other => other,
            })?;
            chunks.push(Chunk {
                doc_id: doc.id.clone(),
                index,
                text: piece.text,
                token_span: piece.token_span,
                embedding,
            });
        }
    }
    if chunks.is_empty() {
        // Still validate the chunk size for an empty corpus.
        if chunk_size < super::MIN_CHUNK_SIZE {
            return Err(KbError::ChunkSizeTooSmall {
                chunk_size,
                min: super::MIN_CHUNK_SIZE,
            });
        }
    }
    Ok(KnowledgeIndex {
        version: INDEX_FORMAT_VERSION,
        chunk_size,
        embedding_dim: EMBEDDING_DIM,
        embedder_limit: EMBEDDER_LIMIT,
        chunks,
    })
}

/// Descending score, then ascending index position.
fn rank(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

impl KnowledgeIndex {
    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    /// The `k` chunks most similar to `query` (all chunks when `k` exceeds
    /// the chunk count), ordered by descending cosine score with ties broken
    /// by index order.
    pub fn retrieve(&self, query: &str, k: usize) -> Result<Vec<Retrieved<'_>>, KbError> {
        if k == 0 {
            return Err(KbError::InvalidK);
        }
        let q = embed(query)?;
        let mut scored: Vec<(f64, usize)> = self
            .chunks
            .iter()
            .enumerate()
            .map(|(i, c)| (super::cosine(&q, &c.embedding), i))
            .collect();
        let k = k.min(scored.len());
        if k == 0 {
            return Ok(Vec::new());
        }
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, rank);
            scored.truncate(k);
        }
        scored.sort_unstable_by(rank);
        Ok(scored
            .into_iter()
            .map(|(score, position)| Retrieved {
                chunk: &self.chunks[position],
                position,
                score,
            })
            .collect())
    }

    pub fn save(&self, path: &Path) -> Result<(), KbError> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(file, self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, KbError> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        let index: KnowledgeIndex = serde_json::from_reader(file)?;
        if index.version != INDEX_FORMAT_VERSION {
            return Err(KbError::UnsupportedVersion {
                found: index.version,
                expected: INDEX_FORMAT_VERSION,
            });
        }
        Ok(index)
    }
}
