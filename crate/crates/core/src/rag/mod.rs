//! Retrieval-augmented question answering: embed the question, retrieve the
//! closest chunks, prompt the model, beam-search an answer, and fall back to
//! extracting sentences from the best chunk when the answer is not grounded
//! in the retrieved context.

mod embed;
mod generate;
mod kb;

use std::collections::HashSet;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use embed::{fnv1a, EmbedderKind, HashedBow, MeanEmbed, TextEmbedder, HASHED_BOW_DIM};
pub use generate::{generate, BeamConfig, LanguageModel};
pub use kb::{KnowledgeBase, Retrieved};

use crate::error::{invalid, CgtError, Result};
use crate::metrics::metric_tokens;
use crate::text::Tokenizer;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RagConfig {
    pub k: usize,
    pub quality_threshold: f64,
    pub beam_width: usize,
    pub max_new_tokens: usize,
    pub length_penalty: f64,
    pub embedder: EmbedderKind,
}

impl Default for RagConfig {
    fn default() -> Self {
        RagConfig {
            k: 3,
            quality_threshold: 0.5,
            beam_width: 4,
            max_new_tokens: 64,
            length_penalty: 1.0,
            embedder: EmbedderKind::MeanEmbed,
        }
    }
}

impl RagConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.beam_width == 0 {
            return Err(CgtError::Config("k and beam_width must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.quality_threshold) {
            return Err(CgtError::Config("quality_threshold must lie in [0, 1]".into()));
        }
        if !self.length_penalty.is_finite() {
            return Err(CgtError::Config("length_penalty must be finite".into()));
        }
        Ok(())
    }
}

/// `Context: {context} Question: {question} Answer: `.
pub fn build_prompt(context: &str, question: &str) -> String {
    format!("Context: {context} Question: {question} Answer: ")
}

/// Retrieved chunk texts in rank order, newline-joined.
pub fn join_context(kb: &KnowledgeBase, retrieved: &[Retrieved]) -> Result<String> {
    let texts = retrieved
        .iter()
        .map(|r| kb.chunk(r.chunk_id).map(|c| c.text.as_str()).ok_or_else(|| invalid!("unknown chunk {}", r.chunk_id)))
        .collect::<Result<Vec<_>>>()?;
    Ok(texts.join("\n"))
}

/// Share of the answer's distinct lowercase word types that occur in the
/// context. Empty answers score 0.
pub fn quality(answer: &str, context: &str) -> f64 {
    let a: HashSet<String> = metric_tokens(answer).into_iter().collect();
    if a.is_empty() {
        return 0.0;
    }
    let c: HashSet<String> = metric_tokens(context).into_iter().collect();
    a.iter().filter(|t| c.contains(*t)).count() as f64 / a.len() as f64
}

/// Sentence byte ranges (trimmed) in `text`. A sentence ends at `.`, `!` or
/// `?` followed by whitespace or end of text, or at a newline.
pub fn sentence_spans(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        let next_is_break = chars.peek().is_none_or(|&(_, n)| n.is_whitespace());
        let end = match c {
            '\n' => Some(i),
            '.' | '!' | '?' if next_is_break => Some(i + c.len_utf8()),
            _ => None,
        };
        if let Some(end) = end {
            push_trimmed(text, start, end, &mut spans);
            start = end;
        }
    }
    push_trimmed(text, start, text.len(), &mut spans);
    spans
}

fn push_trimmed(text: &str, start: usize, end: usize, spans: &mut Vec<(usize, usize)>) {
    let piece = &text[start..end];
    let lead = piece.len() - piece.trim_start().len();
    let trimmed = piece.trim();
    if !trimmed.is_empty() {
        spans.push((start + lead, start + lead + trimmed.len()));
    }
}

fn bow_cosine(a: &[String], b: &[String]) -> f64 {
    let mut counts: std::collections::BTreeMap<&str, (f64, f64)> = std::collections::BTreeMap::new();
    for t in a {
        counts.entry(t).or_default().0 += 1.0;
    }
    for t in b {
        counts.entry(t).or_default().1 += 1.0;
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in counts.values() {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na.sqrt() * nb.sqrt())
    }
}

/// Extractive answer from one chunk: the sentence with the highest
/// bag-of-words cosine to the question, together with whichever adjacent
/// sentence scores higher, returned as the contiguous verbatim span.
pub fn extract_answer(chunk_text: &str, question: &str) -> String {
    let spans = sentence_spans(chunk_text);
    if spans.is_empty() {
        return chunk_text.trim().to_string();
    }
    let q = metric_tokens(question);
    let scores: Vec<f64> = spans.iter().map(|&(s, e)| bow_cosine(&metric_tokens(&chunk_text[s..e]), &q)).collect();
    let best = (0..spans.len()).fold(0, |b, i| if scores[i] > scores[b] { i } else { b });
    let neighbour = match (best.checked_sub(1), (best + 1 < spans.len()).then_some(best + 1)) {
        (Some(p), Some(n)) => Some(if scores[n] > scores[p] { n } else { p }),
        (p, n) => p.or(n),
    };
    let (first, last) = match neighbour {
        Some(j) => (best.min(j), best.max(j)),
        None => (best, best),
    };
    chunk_text[spans[first].0..spans[last].1].to_string()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub text: String,
    pub retrieved: Vec<Retrieved>,
    pub used_fallback: bool,
    pub quality: f64,
    /// Generated text before the quality gate.
    pub generated: String,
    pub seconds: f64,
}

/// The full pipeline. The prompt is left-truncated to `max_seq_len − 1`
/// tokens so the question and the `Answer: ` cue always survive.
pub fn ask(
    question: &str,
    kb: &KnowledgeBase,
    model: &dyn LanguageModel,
    tokenizer: &Tokenizer,
    embedder: &dyn TextEmbedder,
    cfg: &RagConfig,
) -> Result<Answer> {
    let started = Instant::now();
    cfg.validate()?;
    if kb.is_empty() {
        return Err(invalid!("knowledge base is empty"));
    }
    if question.trim().is_empty() {
        return Err(invalid!("question is empty"));
    }
    if model.vocab_size() != tokenizer.vocab_size() {
        return Err(CgtError::Config(format!(
            "model vocab {} does not match tokenizer vocab {}",
            model.vocab_size(),
            tokenizer.vocab_size()
        )));
    }
    let retrieved = kb.retrieve(question, embedder, cfg.k)?;
    let context = join_context(kb, &retrieved)?;
    let prompt = build_prompt(&context, question);
    let mut ids = tokenizer.encode(&prompt);
    let room = model.max_seq_len().saturating_sub(1);
    if room == 0 {
        return Err(CgtError::Config("max_seq_len must be >= 2 for generation".into()));
    }
    if ids.len() > room {
        ids.drain(..ids.len() - room);
    }
    let beam = BeamConfig {
        beam_width: cfg.beam_width,
        max_new_tokens: cfg.max_new_tokens,
        length_penalty: cfg.length_penalty,
        eos_id: tokenizer.eos_id(),
    };
    let out = generate(model, &ids, &beam)?;
    let generated = tokenizer.decode(&out)?.trim().to_string();
    let q = quality(&generated, &context);
    let (text, used_fallback) = if q < cfg.quality_threshold {
        let top = kb.chunk(retrieved[0].chunk_id).expect("retrieved ids come from the kb");
        (extract_answer(&top.text, question), true)
    } else {
        (generated.clone(), false)
    };
    Ok(Answer { text, retrieved, used_fallback, quality: q, generated, seconds: started.elapsed().as_secs_f64() })
}
