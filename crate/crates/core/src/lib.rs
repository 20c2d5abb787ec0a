//! Contextual graph transformer: a language model that runs graph attention
//! over a per-sequence token graph before a causal transformer stack, plus
//! the training, retrieval-augmented QA and evaluation code around it.

pub mod autograd;
pub mod checkpoint;
pub mod eval;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod rag;
pub mod tensor;
pub mod text;
pub mod train;

pub use error::{CgtError, Result};

/// Directory holding the bundled desk-scale corpora and QA set.
pub fn bundled_data_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("data")
}
