use cgt::model::{CgtModel, ModelConfig};
use cgt::text::{Corpus, TokenizerSpec, Tokenizer};
use cgt::train::{
    lm_loss, make_windows, total_loss, train_stage, train_two_stage, LossBreakdown, LossWeights, StageConfig,
};
use cgt::tensor::Tensor;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn windows_cover_every_target_once(docs in prop::collection::vec("[a-z ]{1,90}", 1..5), l in 1usize..20) {
        let tok = Tokenizer::byte_fallback();
        let refs: Vec<&str> = docs.iter().map(String::as_str).collect();
        let corpus = Corpus::from_texts(&refs);
        let windows = make_windows(&corpus, &tok, l).unwrap();
        let mut w = windows.iter();
        for doc in &corpus.documents {
            let mut ids = tok.encode(&doc.text);
            ids.push(tok.eos_id());
            // Targets are ids[1..]; each window contributes its own tail.
            let mut targets = Vec::new();
            while targets.len() + 1 < ids.len() {
                let win = w.next().unwrap();
                prop_assert!(win.len() >= 2 && win.len() <= l + 1);
                prop_assert_eq!(win[0], ids[targets.len()]);
                targets.extend_from_slice(&win[1..]);
            }
            prop_assert_eq!(&targets[..], &ids[1..]);
        }
        prop_assert!(w.next().is_none());
    }

    #[test]
    fn breakdown_total_is_the_weighted_sum(lm in 0.0f64..10.0, g in 0.0f64..10.0, a in 0.0f64..5.0, c in 0.0f64..50.0) {
        let b = total_loss(lm, g, a, c, &LossWeights::default()).unwrap();
        prop_assert!((b.total - (lm + 0.1 * g + 0.05 * a + 0.02 * c)).abs() < 1e-12);
    }
}

#[test]
fn lm_loss_is_mean_cross_entropy_over_present_targets() {
    let logits = Tensor::new(vec![3, 2], vec![0.0f64, 0.0, 2.0, 0.0, 1.0, 1.0]).unwrap();
    let got = lm_loss(&logits, &[Some(0), Some(1), None]).unwrap();
    let want = (2f64.ln() + (1.0 + 2f64.exp()).ln()) / 2.0;
    assert!((got - want).abs() < 1e-12);
    assert!(lm_loss(&logits, &[None, None, None]).is_err());
    assert!(total_loss(f64::NAN, 0.0, 0.0, 0.0, &LossWeights::default()).is_err());
}

fn tiny() -> ModelConfig {
    let mut c = ModelConfig::desk(258);
    c.hidden_dim = 16;
    c.ffn_dim = 32;
    c.heads = 2;
    c.max_seq_len = 16;
    c
}

fn stage(lr: f64, seed: u64) -> StageConfig {
    StageConfig { epochs: 2, learning_rate: lr, batch_size: 2, corpus: None, max_seq_len: 16, seed }
}

#[test]
fn training_is_deterministic_for_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let general = dir.path().join("general");
    let domain = dir.path().join("domain");
    std::fs::create_dir_all(&general).unwrap();
    std::fs::create_dir_all(&domain).unwrap();
    std::fs::write(general.join("a.txt"), "the cat sat on the mat. the dog sat too.").unwrap();
    std::fs::write(general.join("b.txt"), "rain falls in spring and the river rises.").unwrap();
    std::fs::write(domain.join("a.txt"), "the gateway uses port 7001 for relay traffic.").unwrap();
    let tok = Tokenizer::byte_fallback();
    let s1 = StageConfig { corpus: Some(general), ..stage(1e-2, 3) };
    let s2 = StageConfig { corpus: Some(domain), ..stage(3e-3, 3) };
    let run = |out: Option<&std::path::Path>| {
        let mut model = CgtModel::<f32>::init(tiny(), 3).unwrap();
        let mut steps = 0;
        let r = train_two_stage(&mut model, &tok, &TokenizerSpec::ByteFallback, &s1, &s2, &LossWeights::default(), out, &mut |_| steps += 1)
            .unwrap();
        (model, r, steps)
    };
    let out = dir.path().join("out");
    std::fs::create_dir_all(&out).unwrap();
    let (m1, (_, c2, r1), n1) = run(Some(&out));
    let (m2, (_, _, r2), n2) = run(None);
    assert_eq!(r1.without_timing(), r2.without_timing());
    assert_eq!(n1, n2);
    assert_eq!(m1.params(), m2.params());
    assert!(out.join("stage1.cgt").exists() && out.join("stage2.cgt").exists());
    assert_eq!(c2.meta.stage.as_deref(), Some("stage2"));
    assert_eq!(c2.meta.steps, n1 as u64);
    assert!(r1.final_eval_loss.is_finite());
}

#[test]
fn repeated_text_is_learned() {
    let tok = Tokenizer::byte_fallback();
    let corpus = Corpus::from_texts(&["abcabcabcabc", "abcabcabc"]);
    let windows = make_windows(&corpus, &tok, 8).unwrap();
    let mut model = CgtModel::<f32>::init(tiny(), 1).unwrap();
    let mut first: Option<LossBreakdown> = None;
    let mut last = LossBreakdown::default();
    let cfg = StageConfig { epochs: 60, ..stage(1e-2, 1) };
    train_stage(&mut model, &windows, &cfg, "s", 1, &LossWeights::default(), &mut |s| {
        assert!((s.loss.total - s.tape_total).abs() <= 1e-4 * s.loss.total.abs().max(1.0));
        first.get_or_insert(s.loss);
        last = s.loss;
    })
    .unwrap();
    let first = first.unwrap();
    assert!(last.lm < 0.5 * first.lm, "lm {} -> {}", first.lm, last.lm);
}

#[test]
fn mismatched_settings_are_config_errors() {
    let tok = Tokenizer::byte_fallback();
    let mut model = CgtModel::<f32>::init(tiny(), 1).unwrap();
    let too_long = StageConfig { max_seq_len: 64, ..stage(1e-3, 0) };
    let r = train_two_stage(&mut model, &tok, &TokenizerSpec::ByteFallback, &too_long, &stage(1e-3, 0), &LossWeights::default(), None, &mut |_| {});
    assert!(matches!(r, Err(cgt::CgtError::Config(_))));
    let zero_lr = StageConfig { learning_rate: 0.0, ..stage(1e-3, 0) };
    assert!(zero_lr.validate().is_err());
}
