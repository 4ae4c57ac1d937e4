//! Conversational passage retrieval: query rewriting, hybrid BM25 + dense
//! retrieval fused with reciprocal rank fusion, cross-encoder reranking and
//! TREC-style evaluation.

pub mod backends;
pub mod config;
pub mod corpus;
pub mod dense;
pub mod eval;
pub mod fusion;
pub mod lexical;
pub mod pipeline;
pub mod rerank;
pub mod rewrite;
pub mod snapshot;
pub mod sweep;

pub use config::PipelineConfig;
pub use corpus::{Corpus, Domain, Passage};
pub use fusion::{rrf_fuse, RankedList, RrfConfig, ScoredPassage};
pub use pipeline::{Engine, PipelineError};
pub use rewrite::{Conversation, QueryStrategy};
