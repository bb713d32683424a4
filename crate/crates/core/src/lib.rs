//! Desk-scale retrieval-augmented generation.
//!
//! The crate assembles a [`RagSystem`] from a [`KnowledgeStore`], a dual-encoder
//! [`RetrieverModel`] and a log-linear generator ([`LogLinearLM`]), fine-tunes it
//! with retrieval-augmented generator training or LM-supervised retriever
//! training, federates either trainer over a small synchronous FedAvg protocol,
//! and benchmarks the result with exact match.
//!
//! Everything is deterministic given a seed. Data-parallel inner loops (full-scan
//! retrieval, batch embedding, benchmark scoring) run on rayon when the
//! `parallel` feature is enabled and fall back to plain iteration otherwise; see
//! [`exec::Execution`].

pub mod checkpoint;
pub mod error;
pub mod evals;
pub mod exec;
pub mod fl;
pub mod generator;
pub mod knowledge_store;
pub mod linalg;
pub mod rag;
pub mod retriever;
pub mod rng;
pub mod text_features;
pub mod trainers;

pub use checkpoint::Checkpoint;
pub use error::{Error, Result};
pub use evals::{BenchmarkExample, EvaluationResult, ExactMatch};
pub use fl::{FlTask, ModelParameters};
pub use generator::{GenerationConfig, LogLinearLM, Vocab};
pub use knowledge_store::{KnowledgeChunk, KnowledgeStore, RetrievalResult};
pub use rag::{RagConfig, RagResponse, RagSystem};
pub use retriever::RetrieverModel;
pub use trainers::{TrainConfig, TrainExample, TrainMode, TrainResult, TrainerManager};
