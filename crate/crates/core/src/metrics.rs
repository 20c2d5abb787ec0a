//! Text-overlap metrics: BLEU, ROUGE-N/L, Jaccard, plus the parameter
//! efficiency score. All operate on a lowercase alphanumeric tokenization
//! independent of the model tokenizer.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Lowercased maximal runs of alphanumeric characters.
pub fn metric_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() {
            cur.extend(c.to_lowercase());
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut counts = HashMap::new();
    if n == 0 || tokens.len() < n {
        return counts;
    }
    for w in tokens.windows(n) {
        *counts.entry(w.iter().map(|t| t.as_ref()).collect()).or_insert(0) += 1;
    }
    counts
}

/// Clipped n-gram matches and candidate n-gram total.
fn clipped_matches<S: AsRef<str>>(cand: &[S], reference: &[S], n: usize) -> (usize, usize) {
    let c = ngram_counts(cand, n);
    let r = ngram_counts(reference, n);
    let matched = c.iter().map(|(g, &k)| k.min(r.get(g).copied().unwrap_or(0))).sum();
    (matched, cand.len().saturating_sub(n - 1))
}

/// Geometric mean of modified n-gram precisions for n = 1..=max_n with
/// brevity penalty `exp(1 − r/c)` when `c < r`. No smoothing; orders longer
/// than both sequences are left out of the mean.
pub fn bleu_n<S: AsRef<str>>(candidate: &[S], reference: &[S], max_n: usize) -> Result<f64> {
    if reference.is_empty() {
        return Err(invalid!("BLEU needs a non-empty reference"));
    }
    if max_n == 0 {
        return Err(invalid!("BLEU order must be >= 1"));
    }
    if candidate.is_empty() {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    let mut orders = 0;
    for n in 1..=max_n {
        // An order neither side is long enough for carries no evidence.
        if candidate.len() < n && reference.len() < n {
            continue;
        }
        let (matched, total) = clipped_matches(candidate, reference, n);
        if matched == 0 || total == 0 {
            return Ok(0.0);
        }
        log_sum += (matched as f64 / total as f64).ln();
        orders += 1;
    }
    let (c, r) = (candidate.len() as f64, reference.len() as f64);
    let bp = if c < r { (1.0 - r / c).exp() } else { 1.0 };
    Ok(bp * (log_sum / orders as f64).exp())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
}

impl Prf {
    fn from_counts(overlap: usize, cand_total: usize, ref_total: usize) -> Self {
        let recall = if ref_total == 0 { 0.0 } else { overlap as f64 / ref_total as f64 };
        let precision = if cand_total == 0 { 0.0 } else { overlap as f64 / cand_total as f64 };
        let f1 = if recall + precision == 0.0 { 0.0 } else { 2.0 * recall * precision / (recall + precision) };
        Prf { recall, precision, f1 }
    }
}

pub fn rouge_n<S: AsRef<str>>(candidate: &[S], reference: &[S], n: usize) -> Result<Prf> {
    if reference.is_empty() {
        return Err(invalid!("ROUGE needs a non-empty reference"));
    }
    if n == 0 {
        return Err(invalid!("ROUGE order must be >= 1"));
    }
    if candidate.len() < n && reference.len() < n {
        // No n-grams on either side: only whole-sequence identity is observable.
        let same = candidate.len() == reference.len() && candidate.iter().zip(reference).all(|(a, b)| a.as_ref() == b.as_ref());
        let v = if same { 1.0 } else { 0.0 };
        return Ok(Prf { recall: v, precision: v, f1: v });
    }
    let (overlap, cand_total) = clipped_matches(candidate, reference, n);
    Ok(Prf::from_counts(overlap, cand_total, reference.len().saturating_sub(n - 1)))
}

pub fn lcs_len<S: AsRef<str>>(a: &[S], b: &[S]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x.as_ref() == y.as_ref() { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l<S: AsRef<str>>(candidate: &[S], reference: &[S]) -> Result<Prf> {
    if reference.is_empty() {
        return Err(invalid!("ROUGE-L needs a non-empty reference"));
    }
    Ok(Prf::from_counts(lcs_len(candidate, reference), candidate.len(), reference.len()))
}

/// `|a ∩ b| / |a ∪ b|`; two empty sets count as identical (1.0).
pub fn jaccard<S: AsRef<str>>(a: &[S], b: &[S]) -> f64 {
    let sa: HashSet<&str> = a.iter().map(|s| s.as_ref()).collect();
    let sb: HashSet<&str> = b.iter().map(|s| s.as_ref()).collect();
    let union = sa.union(&sb).count();
    if union == 0 {
        return 1.0;
    }
    sa.intersection(&sb).count() as f64 / union as f64
}

/// `1 / (params_millions · loss)`.
pub fn efficiency(params_millions: f64, loss: f64) -> Result<f64> {
    if !(params_millions > 0.0) || !(loss > 0.0) {
        return Err(invalid!("efficiency needs positive inputs, got ({params_millions}, {loss})"));
    }
    Ok(1.0 / (params_millions * loss))
}

/// All per-answer scores against one reference.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub bleu1: f64,
    pub bleu2: f64,
    pub bleu4: f64,
    pub rouge1: Prf,
    pub rouge2: Prf,
    #[serde(rename = "rougeL")]
    pub rouge_l: Prf,
    pub jaccard: f64,
}

pub fn score_answer(candidate: &str, reference: &str) -> Result<Scores> {
    let c = metric_tokens(candidate);
    let r = metric_tokens(reference);
    Ok(Scores {
        bleu1: bleu_n(&c, &r, 1)?,
        bleu2: bleu_n(&c, &r, 2)?,
        bleu4: bleu_n(&c, &r, 4)?,
        rouge1: rouge_n(&c, &r, 1)?,
        rouge2: rouge_n(&c, &r, 2)?,
        rouge_l: rouge_l(&c, &r)?,
        jaccard: jaccard(&c, &r),
    })
}
