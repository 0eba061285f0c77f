//! Module layer of a natural-language data interaction system.
//!
//! - [`awel`]: workflow DSL, validation and DAG execution (batch and stream).
//! - [`agents`]: planner, role-matched worker agents, archived messages.
//! - [`smmf`]: model worker registry and chat-completion gateway.
//! - [`rag`]: chunking, hashed embeddings, vector/BM25/graph retrieval.
//! - [`datachat`]: Text-to-SQL, safe query execution, CSV tables, charts.
//! - [`store`]: append-only conversation event logs.
//! - [`session`]: one chat turn as a stream of client events.
//! - [`demo`]: the offline sales demo.

pub mod agents;
pub mod awel;
pub mod datachat;
pub mod demo;
pub mod num;
pub mod rag;
pub mod session;
pub mod smmf;
pub mod store;
mod template;
pub mod value;

pub use num::Scalar;
pub use value::Value;

pub type DocumentChunk = rag::DocumentChunk<f64>;
pub type Query = rag::Query<f64>;
pub type RetrievalHit = rag::RetrievalHit<f64>;
pub type KnowledgeBase = rag::KnowledgeBase<f64>;
pub type KnowledgeSpaces = rag::KnowledgeSpaces<f64>;

pub type KnowledgeBaseF32 = rag::KnowledgeBase<f32>;
pub type DocumentChunkF32 = rag::DocumentChunk<f32>;
