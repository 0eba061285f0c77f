//! Knowledge construction and retrieval.
//!
//! Documents are segmented into paragraph chunks, each embedded with a
//! hashed bag-of-words encoder (or a remote embedding worker) and indexed
//! three ways: dense vectors, an inverted token index scored with BM25, and a
//! sequence-adjacency graph. Result lists are merged with reciprocal rank
//! fusion and inserted into a prompt template after privacy redaction.

mod encoder;
mod fusion;
mod index;
mod prompt;
mod qa;
mod segment;
mod space;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::num::Scalar;

pub use encoder::{cosine, embed, fnv1a64, tokenize, Embedder, GatewayEmbedder, HashEncoder, DEFAULT_DIM};
pub use fusion::{fuse, DEFAULT_RRF_C};
pub use index::{graph_expand, Bm25Params, KnowledgeBase, DEFAULT_EXPAND_M};
pub use prompt::{build_prompt, redact, DEFAULT_TEMPLATE, DEFAULT_TOKEN_BUDGET};
pub use qa::{answer_question, KnowledgeAnswer};
pub use segment::{segment, DEFAULT_MAX_CHARS, MIN_MAX_CHARS};
pub use space::{valid_space_name, KnowledgeSpaces, SpaceMeta};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RagError {
    #[error("knowledge base is empty")]
    EmptyKnowledgeBase,
    #[error("max_chars must be at least {MIN_MAX_CHARS}, got {0}")]
    InvalidMaxChars(usize),
    #[error("k must be at least 1")]
    InvalidK,
    #[error("prompt template is missing the `{0}` placeholder")]
    BadTemplate(&'static str),
    #[error("invalid knowledge space name `{0}`")]
    InvalidSpaceName(String),
    #[error("embedding failed: {0}")]
    Embedding(String),
    #[error("vector dimension {got} does not match encoder dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("storage error: {0}")]
    Storage(String),
    #[error(transparent)]
    Model(#[from] crate::smmf::ModelError),
}

/// One indexed paragraph of a document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct DocumentChunk<F: Scalar = f64> {
    pub chunk_id: String,
    pub doc_id: String,
    /// 0-based position within the document.
    pub seq: usize,
    pub text: String,
    /// Unit-norm, or all zeros for text without tokens. Empty until indexed.
    pub vector: Vec<F>,
    /// Normalized token multiset.
    pub keywords: std::collections::BTreeMap<String, u32>,
}

impl<F: Scalar> DocumentChunk<F> {
    pub fn chunk_id_for(doc_id: &str, seq: usize) -> String {
        format!("{doc_id}#{seq:04}")
    }

    /// Token count, the document length used by BM25.
    pub fn len_tokens(&self) -> u32 {
        self.keywords.values().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Query<F: Scalar = f64> {
    pub text: String,
    pub vector: Vec<F>,
    pub k: usize,
}

impl<F: Scalar> Query<F> {
    /// Embeds `text` with the reference encoder.
    pub fn new(text: impl Into<String>, k: usize, dim: usize) -> Result<Self, RagError> {
        let text = text.into();
        let vector = embed(&text, dim);
        Self::with_vector(text, vector, k)
    }

    pub fn with_vector(text: impl Into<String>, vector: Vec<F>, k: usize) -> Result<Self, RagError> {
        if k == 0 {
            return Err(RagError::InvalidK);
        }
        Ok(Self { text: text.into(), vector, k })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HitSource {
    Vector,
    Keyword,
    Graph,
    Fused,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct RetrievalHit<F: Scalar = f64> {
    pub chunk_id: String,
    pub score: F,
    pub source: HitSource,
    /// 1-based.
    pub rank: usize,
}

/// Sorts by score descending then chunk id ascending, and renumbers ranks.
pub(crate) fn rank_hits<F: Scalar>(hits: &mut [RetrievalHit<F>]) {
    hits.sort_by(|a, b| crate::num::cmp_desc(a.score, b.score).then_with(|| a.chunk_id.cmp(&b.chunk_id)));
    for (i, h) in hits.iter_mut().enumerate() {
        h.rank = i + 1;
    }
}

/// Vector and keyword retrieval fused with RRF, then widened through the
/// adjacency graph. The retrieval path used for knowledge QA.
pub fn hybrid_search<F: Scalar>(kb: &KnowledgeBase<F>, query: &Query<F>) -> Result<Vec<RetrievalHit<F>>, RagError> {
    let dense = kb.vector_search(query)?;
    let sparse = kb.keyword_search(query)?;
    let mut fused = fuse(&[dense, sparse], DEFAULT_RRF_C);
    fused.truncate(query.k);
    Ok(graph_expand(kb, &fused, DEFAULT_EXPAND_M))
}
