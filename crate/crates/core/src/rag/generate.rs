use crate::error::{invalid, Result};
use crate::model::CgtModel;
use crate::tensor::Scalar;
use crate::text::TokenId;

/// Anything that scores the next token of a prefix.
pub trait LanguageModel {
    fn vocab_size(&self) -> usize;
    fn max_seq_len(&self) -> usize;
    /// Logits for the token following `tokens` (length ≤ `max_seq_len`).
    fn next_logits(&self, tokens: &[TokenId]) -> Result<Vec<f64>>;
}

impl<T: Scalar> LanguageModel for CgtModel<T> {
    fn vocab_size(&self) -> usize {
        self.config().vocab_size
    }

    fn max_seq_len(&self) -> usize {
        self.config().max_seq_len
    }

    fn next_logits(&self, tokens: &[TokenId]) -> Result<Vec<f64>> {
        let logits = self.logits(tokens)?;
        Ok(logits.row(tokens.len() - 1).iter().map(|v| v.f64()).collect())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BeamConfig {
    pub beam_width: usize,
    pub max_new_tokens: usize,
    pub length_penalty: f64,
    pub eos_id: TokenId,
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&z| z - lse).collect()
}

struct Beam {
    tokens: Vec<TokenId>,
    logp: f64,
}

/// Length-penalized beam search. The context fed to the model is the prompt
/// plus the beam, trimmed from the left to `max_seq_len`. Returns only the
/// new tokens, without the terminating eos.
pub fn generate(model: &dyn LanguageModel, prompt: &[TokenId], cfg: &BeamConfig) -> Result<Vec<TokenId>> {
    if cfg.beam_width == 0 {
        return Err(invalid!("beam_width must be >= 1"));
    }
    if prompt.is_empty() {
        return Err(invalid!("prompt is empty"));
    }
    let limit = model.max_seq_len();
    if prompt.len() > limit.saturating_sub(1) {
        return Err(invalid!("prompt of {} tokens does not fit max_seq_len - 1 = {}", prompt.len(), limit.saturating_sub(1)));
    }
    let score = |logp: f64, len: usize| logp / (len.max(1) as f64).powf(cfg.length_penalty);
    let width = cfg.beam_width;
    let mut alive = vec![Beam { tokens: Vec::new(), logp: 0.0 }];
    let mut finished: Vec<(Vec<TokenId>, f64)> = Vec::new();
    let mut context = Vec::with_capacity(limit);

    for _ in 0..cfg.max_new_tokens {
        let mut candidates: Vec<(f64, usize, TokenId)> = Vec::new();
        for (b, beam) in alive.iter().enumerate() {
            context.clear();
            context.extend_from_slice(prompt);
            context.extend_from_slice(&beam.tokens);
            let start = context.len().saturating_sub(limit);
            let logits = model.next_logits(&context[start..])?;
            if logits.len() != model.vocab_size() || logits.iter().any(|v| !v.is_finite()) {
                return Err(crate::error::CgtError::NonFinite("model produced invalid next-token logits".into()));
            }
            let lp = log_softmax(&logits);
            let mut order: Vec<usize> = (0..lp.len()).collect();
            order.sort_by(|&x, &y| lp[y].total_cmp(&lp[x]).then(x.cmp(&y)));
            for &t in order.iter().take(width) {
                candidates.push((beam.logp + lp[t], b, t as TokenId));
            }
        }
        candidates.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
        let mut next = Vec::with_capacity(width);
        for (rank, &(logp, b, t)) in candidates.iter().enumerate() {
            if t == cfg.eos_id {
                if rank < width {
                    let toks = alive[b].tokens.clone();
                    let len = toks.len() + 1;
                    finished.push((toks, score(logp, len)));
                }
                continue;
            }
            let mut tokens = alive[b].tokens.clone();
            tokens.push(t);
            next.push(Beam { tokens, logp });
            if next.len() == width {
                break;
            }
        }
        alive = next;
        if alive.is_empty() || finished.len() >= width {
            break;
        }
    }
    let best = finished
        .into_iter()
        .chain(alive.into_iter().map(|b| {
            let s = score(b.logp, b.tokens.len());
            (b.tokens, s)
        }))
        .fold(None::<(Vec<TokenId>, f64)>, |best, cand| match best {
            Some(b) if b.1 >= cand.1 => Some(b),
            _ => Some(cand),
        });
    Ok(best.map(|b| b.0).unwrap_or_default())
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Forced {
        token: TokenId,
        vocab: usize,
    }

    impl LanguageModel for Forced {
        fn vocab_size(&self) -> usize {
            self.vocab
        }
        fn max_seq_len(&self) -> usize {
            16
        }
        fn next_logits(&self, _tokens: &[TokenId]) -> Result<Vec<f64>> {
            let mut v = vec![0.0; self.vocab];
            v[self.token as usize] = 10.0;
            Ok(v)
        }
    }

    fn cfg(width: usize) -> BeamConfig {
        BeamConfig { beam_width: width, max_new_tokens: 5, length_penalty: 1.0, eos_id: 9 }
    }

    #[test]
    fn greedy_repeats_forced_token() {
        let m = Forced { token: 7, vocab: 10 };
        assert_eq!(generate(&m, &[1, 2], &cfg(1)).unwrap(), vec![7; 5]);
        assert_eq!(generate(&m, &[1, 2], &cfg(4)).unwrap(), vec![7; 5]);
    }

    #[test]
    fn forced_eos_gives_empty() {
        let m = Forced { token: 9, vocab: 10 };
        assert!(generate(&m, &[1], &cfg(1)).unwrap().is_empty());
        assert!(generate(&m, &[1], &cfg(3)).unwrap().is_empty());
    }

    #[test]
    fn long_prompt_rejected() {
        let m = Forced { token: 7, vocab: 10 };
        assert!(generate(&m, &[0; 16], &cfg(1)).is_err());
        assert!(generate(&m, &[0; 15], &cfg(1)).is_ok());
    }
}
