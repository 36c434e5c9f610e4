//! Retrieval knowledge base: embeddings, exact kNN search and prompt
//! augmentation.

mod augment;
mod embed;
mod index;

pub use augment::{augment_query, AugmentOutcome, DEFAULT_BUDGET_BYTES, DEFAULT_NEIGHBORS};
pub use embed::{embed, Embedder, EmbeddingVector, HashingEmbedder, RemoteEmbedder, BUILTIN_ID_PREFIX, DEFAULT_DIM};
pub use index::{cosine, index_build, IndexEntry, KnnResult, Neighbor, VectorIndex};

#[derive(Debug, thiserror::Error)]
pub enum RagError {
    #[error("embedding service unavailable: {0}")]
    EmbeddingServiceUnavailable(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("invalid embedder spec {0:?}; expected `builtin` or `remote:<url>`")]
    InvalidEmbedderSpec(String),
    #[error("embedding failed for pair {pair_id}: {source}")]
    EmbeddingFailed {
        pair_id: String,
        #[source]
        source: Box<RagError>,
    },
    #[error("pair {0} is not a primary pair")]
    NotPrimary(String),
    #[error("pair {0} has an empty query")]
    EmptyQuery(String),
    #[error("duplicate pair id {0}")]
    DuplicatePairId(String),
    #[error("key for pair {0} contains non-finite values")]
    NonFiniteKey(String),
    #[error("n must be at least 1")]
    InvalidTopN,
    #[error("index embedder {index} does not match query embedder {query}")]
    EmbedderMismatch { index: String, query: String },
    #[error("corrupt index: {0}")]
    CorruptIndex(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
