//! Two-stage training: general-corpus pre-training followed by domain
//! adaptation, both on the composite loss with Adam at a constant rate.

mod loss;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use loss::{
    attention_entropy_loss, consistency_loss, graph_loss, lm_loss, record_loss, shift_targets, total_loss, LossBreakdown,
    LossVars, LossWeights,
};

use crate::autograd::Tape;
use crate::checkpoint::{save_checkpoint, Checkpoint, CheckpointMeta};
use crate::error::{invalid, CgtError, Result};
use crate::model::CgtModel;
use crate::optim::AdamState;
use crate::text::{load_corpus, Corpus, TokenId, Tokenizer, TokenizerSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Corpus directory; `None` selects the bundled corpus for the stage.
    #[serde(default)]
    pub corpus: Option<PathBuf>,
    pub max_seq_len: usize,
    #[serde(default)]
    pub seed: u64,
}

impl StageConfig {
    /// General pre-training defaults: 5 epochs, lr 1e-4, batch 16.
    pub fn full_stage1() -> Self {
        StageConfig { epochs: 5, learning_rate: 1e-4, batch_size: 16, corpus: None, max_seq_len: 512, seed: 0 }
    }

    /// Domain adaptation defaults: 5 epochs, lr 5e-5, batch 8.
    pub fn full_stage2() -> Self {
        StageConfig { epochs: 5, learning_rate: 5e-5, batch_size: 8, corpus: None, max_seq_len: 512, seed: 0 }
    }

    /// Desk-scale general stage for [`ModelConfig::desk`](crate::model::ModelConfig::desk):
    /// 2 epochs of 64-token windows, batch 4, lr 1e-2.
    pub fn desk_stage1() -> Self {
        StageConfig { epochs: 2, learning_rate: 1e-2, batch_size: 4, corpus: None, max_seq_len: 64, seed: 0 }
    }

    /// Desk-scale domain stage: as stage 1 with lr 3e-3.
    pub fn desk_stage2() -> Self {
        StageConfig { learning_rate: 3e-3, ..Self::desk_stage1() }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.max_seq_len == 0 {
            return Err(CgtError::Config("epochs, batch_size and max_seq_len must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(CgtError::Config(format!("learning_rate must be > 0, got {}", self.learning_rate)));
        }
        Ok(())
    }
}

/// Splits each document (plus a trailing eos) into windows of up to
/// `max_seq_len + 1` tokens advancing by `max_seq_len`, so every next-token
/// target is covered once. Windows shorter than 2 tokens are dropped.
pub fn make_windows(corpus: &Corpus, tokenizer: &Tokenizer, max_seq_len: usize) -> Result<Vec<Vec<TokenId>>> {
    if max_seq_len == 0 {
        return Err(invalid!("max_seq_len must be >= 1"));
    }
    let mut windows = Vec::new();
    for doc in &corpus.documents {
        let mut ids = tokenizer.encode(&doc.text);
        ids.push(tokenizer.eos_id());
        let mut start = 0;
        while start + 1 < ids.len() {
            let end = (start + max_seq_len + 1).min(ids.len());
            windows.push(ids[start..end].to_vec());
            start += max_seq_len;
        }
    }
    if windows.is_empty() {
        return Err(invalid!("corpus produced no training windows"));
    }
    Ok(windows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub stage: usize,
    pub epoch: usize,
    pub step: u64,
    pub loss: LossBreakdown,
    /// Value of the recorded (differentiated) total, for cross-checking the
    /// breakdown.
    pub tape_total: f64,
    /// Batch mean of `½‖A − Aᵀ‖²`.
    pub asymmetry: f64,
}

/// One optimizer step on a batch of windows. The loss and every component
/// are averaged over the batch; the LM term is weighted by token count so it
/// equals the mean over all target tokens.
pub fn train_step(
    model: &mut CgtModel<f32>,
    adam: &mut AdamState<f32>,
    batch: &[Vec<TokenId>],
    lr: f64,
    weights: &LossWeights,
) -> Result<(LossBreakdown, f64, f64)> {
    if batch.is_empty() {
        return Err(invalid!("empty batch"));
    }
    let tokens: usize = batch.iter().map(|w| w.len().saturating_sub(1)).sum();
    let mut breakdown = LossBreakdown::default();
    let mut asymmetry = 0.0;
    let (grads, tape_total) = {
        let mut tape = Tape::new();
        let mut acc = None;
        for window in batch {
            let (inputs, targets) = shift_targets(window)?;
            let lv = record_loss(&mut tape, model, model.params(), inputs, &targets, weights, None)?;
            let lm_share = inputs.len() as f64 / tokens as f64;
            let reg_share = 1.0 / batch.len() as f64;
            // total_b = lm_b + reg_b; rescale the two parts separately.
            let lm_scaled = tape.scale(lv.lm, lm_share as f32);
            let reg = tape.sub(lv.total, lv.lm)?;
            let reg_scaled = tape.scale(reg, reg_share as f32);
            let part = tape.add(lm_scaled, reg_scaled)?;
            acc = Some(match acc {
                None => part,
                Some(a) => tape.add(a, part)?,
            });
            let b = &lv.breakdown;
            breakdown.lm += lm_share * b.lm;
            breakdown.graph += reg_share * b.graph;
            breakdown.attention += reg_share * b.attention;
            breakdown.consistency += reg_share * b.consistency;
            asymmetry += reg_share * lv.asymmetry;
        }
        let total = acc.expect("non-empty batch");
        let value = tape.scalar(total) as f64;
        if !value.is_finite() {
            return Err(CgtError::NonFinite(format!("training loss is {value}")));
        }
        (tape.backward(total)?.params, value)
    };
    let breakdown = total_loss(breakdown.lm, breakdown.graph, breakdown.attention, breakdown.consistency, weights)?;
    for g in grads.0.iter().flatten() {
        if g.iter().any(|v| !v.is_finite()) {
            return Err(CgtError::NonFinite("gradient contains NaN/Inf".into()));
        }
    }
    adam.step(model.params_mut(), &grads, lr)?;
    Ok((breakdown, tape_total, asymmetry))
}

/// Token-weighted mean LM loss over `windows`, without updating anything.
pub fn evaluate_lm(model: &CgtModel<f32>, windows: &[Vec<TokenId>]) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for w in windows {
        let (inputs, targets) = shift_targets(w)?;
        let logits = model.logits(inputs)?;
        sum += lm_loss(&logits, &targets)? * inputs.len() as f64;
        count += inputs.len();
    }
    if count == 0 {
        return Err(invalid!("no evaluation windows"));
    }
    Ok(sum / count as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub steps: usize,
    pub mean: LossBreakdown,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub name: String,
    pub config: StageConfig,
    pub windows: usize,
    pub epochs: Vec<EpochReport>,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub stages: Vec<StageReport>,
    /// Mean LM loss of the final model over the last stage's corpus.
    pub final_eval_loss: f64,
    pub weights: LossWeights,
}

impl TrainReport {
    /// Copy with wall-clock fields zeroed, for determinism comparisons.
    pub fn without_timing(&self) -> Self {
        let mut r = self.clone();
        for s in &mut r.stages {
            s.seconds = 0.0;
        }
        r
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<8} {:>5} {:>6} {:>10} {:>12} {:>11} {:>12} {:>10}",
            "stage", "epoch", "steps", "lm", "graph", "attention", "consistency", "total"
        );
        for st in &self.stages {
            for e in &st.epochs {
                let m = &e.mean;
                let _ = writeln!(
                    s,
                    "{:<8} {:>5} {:>6} {:>10.4} {:>12.4} {:>11.4} {:>12.4} {:>10.4}",
                    st.name, e.epoch, e.steps, m.lm, m.graph, m.attention, m.consistency, m.total
                );
            }
            let _ = writeln!(s, "{:<8} wall-clock {:.2}s over {} windows", st.name, st.seconds, st.windows);
        }
        let _ = writeln!(s, "final eval lm loss {:.4}", self.final_eval_loss);
        s
    }
}

/// Runs one stage over pre-built windows. `observer` sees every step.
pub fn train_stage(
    model: &mut CgtModel<f32>,
    windows: &[Vec<TokenId>],
    cfg: &StageConfig,
    name: &str,
    stage_index: usize,
    weights: &LossWeights,
    observer: &mut dyn FnMut(&StepInfo),
) -> Result<StageReport> {
    cfg.validate()?;
    if windows.is_empty() {
        return Err(invalid!("stage {name} has no training windows"));
    }
    let started = Instant::now();
    let mut adam = AdamState::new(model.params());
    let mut order: Vec<usize> = (0..windows.len()).collect();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(epoch as u64));
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut mean = LossBreakdown::default();
        let mut steps = 0;
        let batches: Vec<&[usize]> = order.chunks(cfg.batch_size).collect();
        for idx in &batches {
            let batch: Vec<Vec<TokenId>> = idx.iter().map(|&i| windows[i].clone()).collect();
            let (loss, tape_total, asymmetry) = train_step(model, &mut adam, &batch, cfg.learning_rate, weights)?;
            observer(&StepInfo { stage: stage_index, epoch, step: adam.step, loss, tape_total, asymmetry });
            mean.add_scaled(&loss, 1.0);
            steps += 1;
        }
        let mut scaled = LossBreakdown::default();
        scaled.add_scaled(&mean, 1.0 / steps as f64);
        epochs.push(EpochReport { epoch, steps, mean: scaled });
    }
    Ok(StageReport {
        name: name.to_string(),
        config: cfg.clone(),
        windows: windows.len(),
        epochs,
        seconds: started.elapsed().as_secs_f64(),
    })
}

fn stage_corpus(cfg: &StageConfig, bundled: &str) -> Result<Corpus> {
    let dir = cfg.corpus.clone().unwrap_or_else(|| crate::bundled_data_dir().join(bundled));
    load_corpus(&dir)
}

/// Stage 1 on the general corpus, then stage 2 from the stage-1 weights on
/// the domain corpus (fresh optimizer state). Writes `stage1.cgt` and
/// `stage2.cgt` into `out_dir` when given.
pub fn train_two_stage(
    model: &mut CgtModel<f32>,
    tokenizer: &Tokenizer,
    tokenizer_spec: &TokenizerSpec,
    stage1: &StageConfig,
    stage2: &StageConfig,
    weights: &LossWeights,
    out_dir: Option<&Path>,
    observer: &mut dyn FnMut(&StepInfo),
) -> Result<(Checkpoint, Checkpoint, TrainReport)> {
    if tokenizer.vocab_size() != model.config().vocab_size {
        return Err(CgtError::Config(format!(
            "tokenizer vocab {} does not match model vocab {}",
            tokenizer.vocab_size(),
            model.config().vocab_size
        )));
    }
    for s in [stage1, stage2] {
        s.validate()?;
        if s.max_seq_len > model.config().max_seq_len {
            return Err(CgtError::Config(format!(
                "stage max_seq_len {} exceeds model max_seq_len {}",
                s.max_seq_len,
                model.config().max_seq_len
            )));
        }
    }
    let general = make_windows(&stage_corpus(stage1, "general")?, tokenizer, stage1.max_seq_len)?;
    let domain = make_windows(&stage_corpus(stage2, "domain")?, tokenizer, stage2.max_seq_len)?;

    let mut reports = Vec::new();
    let mut checkpoints = Vec::new();
    let mut steps = 0u64;
    for (i, (cfg, windows, name)) in [(stage1, &general, "stage1"), (stage2, &domain, "stage2")].into_iter().enumerate() {
        let report = train_stage(model, windows, cfg, name, i + 1, weights, observer)?;
        steps += report.epochs.iter().map(|e| e.steps as u64).sum::<u64>();
        let meta = CheckpointMeta {
            seed: cfg.seed,
            stage: Some(name.into()),
            steps,
            final_loss: report.epochs.last().map(|e| e.mean.lm),
            tokenizer: tokenizer_spec.clone(),
        };
        let ckpt = Checkpoint::from_model(model, meta);
        if let Some(dir) = out_dir {
            std::fs::create_dir_all(dir)?;
            save_checkpoint(&dir.join(format!("{name}.cgt")), &ckpt)?;
        }
        checkpoints.push(ckpt);
        reports.push(report);
    }
    let final_eval_loss = evaluate_lm(model, &domain)?;
    let report = TrainReport { stages: reports, final_eval_loss, weights: *weights };
    let c2 = checkpoints.pop().expect("two stages");
    let c1 = checkpoints.pop().expect("two stages");
    Ok((c1, c2, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_stage_defaults() {
        let (a, b) = (StageConfig::full_stage1(), StageConfig::full_stage2());
        assert_eq!((a.epochs, a.learning_rate, a.batch_size), (5, 1e-4, 16));
        assert_eq!((b.epochs, b.learning_rate, b.batch_size), (5, 5e-5, 8));
        a.validate().unwrap();
        b.validate().unwrap();
    }

    #[test]
    fn windows_cover_every_target_once() {
        let tok = Tokenizer::byte_fallback();
        let corpus = Corpus::from_texts(&["abcdefghij"]);
        let w = make_windows(&corpus, &tok, 4).unwrap();
        let targets: usize = w.iter().map(|x| x.len() - 1).sum();
        assert_eq!(targets, 10);
        assert_eq!(w[0], vec![97, 98, 99, 100, 101]);
        assert_eq!(*w.last().unwrap().last().unwrap(), tok.eos_id());
    }
}
