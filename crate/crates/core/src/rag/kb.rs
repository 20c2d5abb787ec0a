use std::path::Path;

use serde::{Deserialize, Serialize};

use super::embed::{EmbedderKind, TextEmbedder};
use crate::checkpoint::{decode_container, encode_container, write_atomic, KB_MAGIC};
use crate::error::{invalid, CgtError, Result};
use crate::tensor::{cosine, Tensor};
use crate::text::Chunk;

/// Chunks with one unit-norm retrieval embedding each.
#[derive(Clone, Debug, PartialEq)]
pub struct KnowledgeBase {
    pub chunks: Vec<Chunk>,
    /// `chunks × dim`.
    pub embeddings: Tensor<f32>,
    pub embedder: EmbedderKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Retrieved {
    pub chunk_id: usize,
    pub doc_id: usize,
    pub score: f64,
}

#[derive(Serialize, Deserialize)]
struct KbHeader {
    embedder: EmbedderKind,
    dim: usize,
    chunks: Vec<Chunk>,
}

impl KnowledgeBase {
    pub fn build(chunks: Vec<Chunk>, embedder: &dyn TextEmbedder) -> Result<Self> {
        if chunks.is_empty() {
            return Err(invalid!("knowledge base needs at least one chunk"));
        }
        let dim = embedder.dim();
        let mut data = Vec::with_capacity(chunks.len() * dim);
        for c in &chunks {
            data.extend(embedder.embed(&c.text)?.into_iter().map(|x| x as f32));
        }
        Ok(KnowledgeBase { embeddings: Tensor::new(vec![chunks.len(), dim], data)?, chunks, embedder: embedder.kind() })
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.cols()
    }

    pub fn chunk(&self, id: usize) -> Option<&Chunk> {
        self.chunks.iter().find(|c| c.chunk_id == id)
    }

    /// Top-`min(k, len)` chunks by cosine similarity to `query`, ties going
    /// to the lower chunk id.
    pub fn retrieve_embedding(&self, query: &[f64], k: usize) -> Result<Vec<Retrieved>> {
        if self.is_empty() {
            return Err(invalid!("knowledge base is empty"));
        }
        if k == 0 {
            return Err(invalid!("k must be >= 1"));
        }
        if query.len() != self.dim() {
            return Err(CgtError::Config(format!("query dim {} vs knowledge base dim {}", query.len(), self.dim())));
        }
        let mut scored: Vec<Retrieved> = self
            .chunks
            .iter()
            .enumerate()
            .map(|(row, c)| {
                let e: Vec<f64> = self.embeddings.row(row).iter().map(|&x| x as f64).collect();
                Retrieved { chunk_id: c.chunk_id, doc_id: c.doc_id, score: cosine(query, &e) }
            })
            .collect();
        scored.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.chunk_id.cmp(&b.chunk_id)));
        scored.truncate(k.min(scored.len()));
        Ok(scored)
    }

    pub fn retrieve(&self, query: &str, embedder: &dyn TextEmbedder, k: usize) -> Result<Vec<Retrieved>> {
        if embedder.kind() != self.embedder {
            return Err(CgtError::Config(format!(
                "knowledge base was built with {}, query embedder is {}",
                self.embedder.as_str(),
                embedder.kind().as_str()
            )));
        }
        self.retrieve_embedding(&embedder.embed(query)?, k)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = KbHeader { embedder: self.embedder, dim: self.dim(), chunks: self.chunks.clone() };
        let serde_json::Value::Object(fields) = serde_json::to_value(&header)? else {
            unreachable!("struct serializes to an object")
        };
        encode_container(KB_MAGIC, fields, &[("embeddings", &self.embeddings)])
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let c = decode_container(bytes, KB_MAGIC)?;
        let header: KbHeader = serde_json::from_value(serde_json::Value::Object(c.header))
            .map_err(|e| CgtError::Format(format!("knowledge base header: {e}")))?;
        let [(name, embeddings)]: [(String, Tensor<f32>); 1] = c
            .tensors
            .try_into()
            .map_err(|_| CgtError::Format("knowledge base must hold exactly one tensor".into()))?;
        if name != "embeddings" || embeddings.shape() != [header.chunks.len(), header.dim] {
            return Err(CgtError::Format(format!(
                "embedding tensor {name} {:?} does not match {} chunks of dim {}",
                embeddings.shape(),
                header.chunks.len(),
                header.dim
            )));
        }
        Ok(KnowledgeBase { chunks: header.chunks, embeddings, embedder: header.embedder })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
