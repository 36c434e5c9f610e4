//! Repository-to-dataset pipeline for scope-aware code completion:
//! ingestion, scope extraction, completion-pair generation, exact-kNN
//! retrieval, model clients and Levenshtein-based evaluation.

pub mod ingest;
pub mod scopes;
pub mod jsonl;
pub mod pairs;
pub mod metrics;
pub mod rag;
pub mod client;
pub mod pipeline;
