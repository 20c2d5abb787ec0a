//! Corpus ingestion, tokenization and chunking.

mod tokenizer;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, CgtError, Result};

pub use tokenizer::{pretokenize, TokenId, Tokenizer, TokenizerMode};

/// How to rebuild the tokenizer a model was trained with.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum TokenizerSpec {
    #[default]
    ByteFallback,
    LoadedBpe { vocab: PathBuf, merges: PathBuf },
}

impl TokenizerSpec {
    pub fn load(&self) -> Result<Tokenizer> {
        match self {
            TokenizerSpec::ByteFallback => Ok(Tokenizer::byte_fallback()),
            TokenizerSpec::LoadedBpe { vocab, merges } => Tokenizer::from_bpe_files(vocab, merges),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: usize,
    /// File name the document came from.
    pub name: String,
    pub text: String,
    pub path: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub documents: usize,
    pub total_tokens: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Corpus {
    pub documents: Vec<Document>,
}

impl Corpus {
    pub fn from_texts<S: AsRef<str>>(texts: &[S]) -> Self {
        let documents = texts
            .iter()
            .enumerate()
            .map(|(id, t)| Document { id, name: format!("doc{id}"), text: t.as_ref().to_string(), path: PathBuf::new() })
            .collect();
        Corpus { documents }
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn stats(&self, tokenizer: &Tokenizer) -> CorpusStats {
        CorpusStats {
            documents: self.documents.len(),
            total_tokens: self.documents.iter().map(|d| tokenizer.encode(&d.text).len()).sum(),
        }
    }
}

/// Reads every `.txt` file in `dir` (non-recursive) as one document, in
/// lexicographic filename order. Whitespace-only files are skipped.
pub fn load_corpus(dir: &Path) -> Result<Corpus> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "txt"))
        .collect();
    paths.sort();
    let mut documents = Vec::with_capacity(paths.len());
    for path in paths {
        let bytes = std::fs::read(&path)?;
        let text = String::from_utf8(bytes)
            .map_err(|_| CgtError::Format(format!("{} is not valid UTF-8", path.display())))?;
        if text.trim().is_empty() {
            continue;
        }
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        documents.push(Document { id: documents.len(), name, text, path });
    }
    if documents.is_empty() {
        return Err(invalid!("no non-empty .txt documents in {}", dir.display()));
    }
    Ok(Corpus { documents })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    #[serde(rename = "id")]
    pub chunk_id: usize,
    pub doc_id: usize,
    /// Token span `[start, end)` within the document.
    pub span: (usize, usize),
    pub text: String,
}

/// Token spans of one document: windows of `size` with stride
/// `size − overlap`, the last one possibly short.
pub fn chunk_spans(len: usize, size: usize, overlap: usize) -> Result<Vec<(usize, usize)>> {
    if size == 0 || overlap >= size {
        return Err(invalid!("chunking needs 0 <= overlap < size, got size {size}, overlap {overlap}"));
    }
    let stride = size - overlap;
    let mut spans = Vec::new();
    let mut start = 0;
    while start < len {
        let end = (start + size).min(len);
        spans.push((start, end));
        if end == len {
            break;
        }
        start += stride;
    }
    Ok(spans)
}

pub fn chunk_corpus(corpus: &Corpus, tokenizer: &Tokenizer, size: usize, overlap: usize) -> Result<Vec<Chunk>> {
    chunk_spans(0, size, overlap)?;
    let mut chunks = Vec::new();
    for doc in &corpus.documents {
        let ids = tokenizer.encode(&doc.text);
        for (start, end) in chunk_spans(ids.len(), size, overlap)? {
            chunks.push(Chunk {
                chunk_id: chunks.len(),
                doc_id: doc.id,
                span: (start, end),
                text: tokenizer.decode(&ids[start..end])?,
            });
        }
    }
    Ok(chunks)
}
