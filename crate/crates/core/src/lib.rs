//! Sparse retrieval with expansion reranking.
//!
//! A question is expanded many times, each expansion is scored by a trained
//! query reranker, and the best one is issued to a BM25 index. The crate
//! also carries the baselines (plain BM25, greedy, concatenation, oracle),
//! passage reranking, list fusion, metrics and a latency harness.

pub mod corpus;
pub mod error;
pub mod eval;
pub mod expansion;
pub mod index;
mod jsonl;
pub mod passage_rerank;
pub mod pipeline;
pub mod planted;
pub mod ranked;
pub mod reranker;
pub mod text;

pub use corpus::{contains_answer, load_corpus, load_questions, AnswerMatcher, Passage, PassageStore, QAExample};
pub use error::{Error, Result};
pub use index::{build_index, Bm25Params, Index};
pub use ranked::{RankedEntry, RankedList};
pub use text::{normalize, Analyzer, NormalizedText};
