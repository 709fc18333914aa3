//! Search-engine-augmented dialogue: query generation, retrieval, grounded
//! context assembly, constrained decoding and evaluation.

pub mod corpus;
pub mod dense_index;
pub mod fusion_decode;
pub mod metrics;
pub mod orchestrator;
pub mod query_gen;
pub mod search_engine;
pub mod text;
pub mod training_data;
