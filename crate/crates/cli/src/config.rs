use std::path::Path;

use cgt::eval::QaItem;
use cgt::model::ModelConfig;
use cgt::rag::RagConfig;
use cgt::text::TokenizerSpec;
use cgt::train::{LossWeights, StageConfig};
use cgt::{CgtError, Result};
use serde::{Deserialize, Serialize};

/// Everything a run needs. The model fields sit at the top level; the stage,
/// retrieval and loss settings are nested.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(flatten)]
    pub model: ModelConfig,
    #[serde(default = "StageConfig::desk_stage1")]
    pub stage1: StageConfig,
    #[serde(default = "StageConfig::desk_stage2")]
    pub stage2: StageConfig,
    #[serde(default)]
    pub rag: RagConfig,
    #[serde(default)]
    pub loss: LossWeights,
    #[serde(default)]
    pub tokenizer: TokenizerSpec,
    #[serde(default = "default_chunk_size")]
    pub chunk_size: usize,
    #[serde(default = "default_chunk_overlap")]
    pub chunk_overlap: usize,
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_chunk_size() -> usize {
    128
}

fn default_chunk_overlap() -> usize {
    32
}

impl RunConfig {
    /// Byte-level desk configuration.
    pub fn desk() -> Self {
        RunConfig {
            model: ModelConfig::desk(cgt::text::Tokenizer::byte_fallback().vocab_size()),
            stage1: StageConfig::desk_stage1(),
            stage2: StageConfig::desk_stage2(),
            rag: RagConfig::default(),
            loss: LossWeights::default(),
            tokenizer: TokenizerSpec::ByteFallback,
            chunk_size: default_chunk_size(),
            chunk_overlap: default_chunk_overlap(),
            seed: None,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| CgtError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.stage1.validate()?;
        self.stage2.validate()?;
        self.rag.validate()?;
        if self.chunk_size == 0 || self.chunk_overlap >= self.chunk_size {
            return Err(CgtError::Config("need chunk_size >= 1 and chunk_overlap < chunk_size".into()));
        }
        Ok(())
    }
}

pub fn load_qa_or_bundled(path: Option<&Path>) -> Result<Vec<QaItem>> {
    match path {
        Some(p) => cgt::eval::load_qa(p),
        None => cgt::eval::load_qa(&cgt::bundled_data_dir().join("qa.jsonl")),
    }
}
