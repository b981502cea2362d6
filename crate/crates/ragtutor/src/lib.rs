//! Local retrieval-augmented generation (RAG) course assistant.
//!
//! The pipeline ingests course documents into overlapping chunks, embeds them
//! into unit vectors, stores them in an exact flat vector index, and answers
//! questions by retrieving the most similar chunks and prompting a local
//! inference server with the retrieved context. A Telegram bot front-end
//! serves students over long polling, and a benchmark harness measures
//! TTFB / tokens-per-second of the generation backend.
//!
//! Everything network-facing (embedding server, completion server, Telegram
//! API) sits behind small wire adapters with deterministic mocks, so the
//! whole pipeline runs offline.

pub mod bench;
pub mod bot;
pub mod config;
pub mod embed;
pub mod index;
pub mod ingest;
pub mod llm;
pub mod rag;

pub use config::RuntimeConfig;
pub use embed::{EmbeddingProvider, EmbeddingVector};
pub use index::{SearchHit, VectorIndex};
pub use ingest::{Chunk, SourceDocument};
pub use llm::{GenerationBackend, GenerationParams, GenerationResult};
