//! Retrieval-augmented agent simulation toolkit: corpus indexing, corpus-aware
//! seed selection, Analyst–Critic–Judge simulation with active validation,
//! behavioral metrics and dataset export.

pub mod corpus;
pub mod dataset;
pub mod embedding;
pub mod http;
pub mod jsonl;
pub mod metrics;
pub mod seeding;
pub mod simulation;
pub mod synthetic;
pub mod tokenize;
pub mod validation;

pub use corpus::{Bm25Params, Corpus, CorpusError, Document, Hit, RetrievalResult};
pub use embedding::{cosine_similarity, EmbeddingProvider, EmbeddingVector, HashingProvider};
pub use tokenize::{tokenize, Stopwords, TokenList};
