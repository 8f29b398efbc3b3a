//! Retrieval-augmented question answering over legal documents, plus the
//! evaluation harness used to compare retriever and generator pairings.
//!
//! The pipeline runs in stages:
//!
//! 1. [`corpus`] loads and normalizes documents.
//! 2. [`chunker`] splits them into overlapping, character-budgeted chunks.
//! 3. Chunks are indexed lexically ([`bm25`]) or embedded ([`embedding`]) into
//!    a [`vector_store`].
//! 4. [`generation`] packs retrieved chunks into a prompt and asks a
//!    generative or extractive provider for an answer.
//! 5. [`metrics`] and [`harness`] score answers against ground truth and emit
//!    reports.

pub mod bm25;
pub mod chunker;
pub mod corpus;
pub mod embedding;
pub mod generation;
pub mod harness;
pub mod metrics;
pub mod tokenize;
pub mod transport;
pub mod vector_store;

mod jsonl;

pub use bm25::{Bm25Index, ScoredChunk};
pub use chunker::{Chunk, ChunkerConfig};
pub use corpus::{CleanDocument, CorpusStats, DocumentKind, RawDocument};
pub use embedding::{Embedder, EmbeddingProviderSpec};
pub use generation::{Answer, AnswerMode, PromptTemplate, TemplateId};
pub use harness::{Report, RunConfig, RunResult, TestCase};
pub use metrics::{RatingDistribution, RatingRecord, Prf};
pub use tokenize::TokenizerConfig;
pub use vector_store::VectorStore;
