use serde::{Deserialize, Serialize};

use crate::error::{invalid, CgtError, Result};
use crate::metrics::metric_tokens;
use crate::tensor::Tensor;
use crate::text::Tokenizer;

pub const HASHED_BOW_DIM: usize = 384;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbedderKind {
    MeanEmbed,
    HashedBow,
}

impl EmbedderKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EmbedderKind::MeanEmbed => "mean-embed",
            EmbedderKind::HashedBow => "hashed-bow",
        }
    }
}

impl std::str::FromStr for EmbedderKind {
    type Err = CgtError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean-embed" => Ok(EmbedderKind::MeanEmbed),
            "hashed-bow" => Ok(EmbedderKind::HashedBow),
            other => Err(CgtError::Config(format!("unknown embedder {other:?} (expected mean-embed or hashed-bow)"))),
        }
    }
}

/// Text → unit vector.
pub trait TextEmbedder {
    fn kind(&self) -> EmbedderKind;
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Vec<f64>>;
}

fn normalize(mut v: Vec<f64>) -> Result<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(CgtError::NonFinite("embedding has zero or non-finite norm".into()));
    }
    v.iter_mut().for_each(|x| *x /= norm);
    Ok(v)
}

fn check_text(text: &str) -> Result<()> {
    if text.trim().is_empty() {
        return Err(invalid!("cannot embed empty text"));
    }
    Ok(())
}

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Hashed bag of lowercase word tokens, L2-normalized.
#[derive(Clone, Debug)]
pub struct HashedBow {
    pub dim: usize,
}

impl Default for HashedBow {
    fn default() -> Self {
        HashedBow { dim: HASHED_BOW_DIM }
    }
}

impl HashedBow {
    pub fn bucket(&self, token: &str) -> usize {
        (fnv1a(token.as_bytes()) % self.dim as u64) as usize
    }
}

impl TextEmbedder for HashedBow {
    fn kind(&self) -> EmbedderKind {
        EmbedderKind::HashedBow
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        check_text(text)?;
        let mut v = vec![0.0; self.dim];
        let tokens = metric_tokens(text);
        if tokens.is_empty() {
            // Punctuation-only text: hash it whole so it still embeds.
            v[self.bucket(text.trim())] = 1.0;
        }
        for t in tokens {
            v[self.bucket(&t)] += 1.0;
        }
        normalize(v)
    }
}

/// Mean of the model's token-embedding rows for the text's tokens.
pub struct MeanEmbed<'a> {
    table: &'a Tensor<f32>,
    tokenizer: &'a Tokenizer,
}

impl<'a> MeanEmbed<'a> {
    pub fn new(table: &'a Tensor<f32>, tokenizer: &'a Tokenizer) -> Result<Self> {
        let (rows, _) = table.dims2()?;
        if rows != tokenizer.vocab_size() {
            return Err(CgtError::Config(format!(
                "embedding table has {rows} rows, tokenizer vocab is {}",
                tokenizer.vocab_size()
            )));
        }
        Ok(MeanEmbed { table, tokenizer })
    }
}

impl TextEmbedder for MeanEmbed<'_> {
    fn kind(&self) -> EmbedderKind {
        EmbedderKind::MeanEmbed
    }

    fn dim(&self) -> usize {
        self.table.cols()
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        check_text(text)?;
        let ids = self.tokenizer.encode(text);
        let d = self.dim();
        let mut v = vec![0.0; d];
        for &id in &ids {
            for (acc, &x) in v.iter_mut().zip(self.table.row(id as usize)) {
                *acc += x as f64;
            }
        }
        v.iter_mut().for_each(|x| *x /= ids.len() as f64);
        normalize(v)
    }
}
