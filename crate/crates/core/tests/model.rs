use cgt::model::{count_params, positional_encoding, positional_table, CgtModel, ModelConfig, Variant};
use cgt::tensor::Tensor;
use proptest::prelude::*;

fn tiny(variant: Variant) -> ModelConfig {
    let mut c = ModelConfig::new(19, 8, 1, 1, 2, 12);
    c.ffn_dim = 16;
    c.init_std = 0.3;
    c.with_variant(variant)
}

#[test]
fn full_size_parameter_count() {
    let untied = count_params(&ModelConfig::full_size());
    let d = 384;
    let v = 50257;
    assert_eq!(untied.embeddings, v * d);
    assert_eq!(untied.gnn_per_layer, d * d + 2 * d);
    assert_eq!(untied.transformer_per_layer, 4 * d * d + 2 * d * 4 * d + 4 * d + d);
    assert_eq!(untied.total, 46_133_760);
    let mut tied_cfg = ModelConfig::full_size();
    tied_cfg.tie_lm_head = true;
    let tied = count_params(&tied_cfg);
    assert_eq!(tied.total, untied.total - v * d);
    // The reported figure is 46.8M; the untied layout lands within 1.5%.
    let rel = (46.8e6 - untied.total as f64).abs() / 46.8e6;
    println!("untied {} tied {} (reported 46.8M, rel gap {rel:.4})", untied.total, tied.total);
    assert!(rel < 0.015);
}

#[test]
fn closed_form_count_matches_allocation() {
    for variant in [Variant::Hybrid, Variant::PureTransformer, Variant::PureGnn] {
        for tie in [false, true] {
            for multi in [false, true] {
                let mut c = tiny(variant);
                c.tie_lm_head = tie;
                c.gnn_multi_head = multi;
                c.gnn_layers = 2;
                let m = CgtModel::<f64>::init(c.clone(), 3).unwrap();
                assert_eq!(m.params().scalar_count(), count_params(&c).total, "{variant:?} tie={tie} multi={multi}");
            }
        }
    }
}

#[test]
fn hybrid_is_smaller_than_equal_depth_transformer() {
    let hybrid = ModelConfig::full_size();
    let mut deep = ModelConfig::full_size().with_variant(Variant::PureTransformer);
    deep.transformer_layers = hybrid.gnn_layers + hybrid.transformer_layers;
    assert!(count_params(&hybrid).total < count_params(&deep).total);
    let desk = ModelConfig::desk(258);
    let mut desk_deep = desk.clone().with_variant(Variant::PureTransformer);
    desk_deep.transformer_layers = 2;
    assert!(count_params(&desk).total < count_params(&desk_deep).total);
}

#[test]
fn positional_encoding_values() {
    let p0 = positional_encoding(0, 6).unwrap();
    assert_eq!(p0, vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    let p = positional_encoding(5, 4).unwrap();
    assert!((p[0] - 5f64.sin()).abs() < 1e-15);
    assert!((p[1] - 5f64.cos()).abs() < 1e-15);
    assert!((p[2] - (5.0 / 100.0f64).sin()).abs() < 1e-15);
    assert!((p[3] - (5.0 / 100.0f64).cos()).abs() < 1e-15);
    assert!(positional_encoding(1, 3).is_err());
    let table: Tensor<f32> = positional_table(7, 4).unwrap();
    assert_eq!(table.dims2().unwrap(), (7, 4));
    assert!((table.at(5, 2) as f64 - p[2]).abs() < 1e-7);
}

fn prefix_logits_change(cfg: ModelConfig, seed: u64, a: &[u32], b: &[u32], prefix: usize) -> f64 {
    let m = CgtModel::<f64>::init(cfg, seed).unwrap();
    let la = m.logits(a).unwrap();
    let lb = m.logits(b).unwrap();
    let mut worst = 0.0f64;
    for i in 0..prefix {
        for (x, y) in la.row(i).iter().zip(lb.row(i)) {
            worst = worst.max((x - y).abs());
        }
    }
    worst
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(60))]

    #[test]
    fn strict_models_ignore_future_tokens(
        seed in any::<u64>(),
        toks in prop::collection::vec(0u32..19, 4..12),
        cut_frac in 0.1f64..0.9,
        replacement in 0u32..19,
        variant in prop::sample::select(vec![Variant::Hybrid, Variant::PureTransformer, Variant::PureGnn]),
    ) {
        let cut = ((toks.len() as f64 * cut_frac) as usize).clamp(1, toks.len() - 1);
        let mut other = toks.clone();
        for t in other.iter_mut().skip(cut) {
            *t = (replacement + *t + 1) % 19;
        }
        let mut cfg = tiny(variant);
        cfg.graph.strict_causal = true;
        prop_assert!(prefix_logits_change(cfg, seed, &toks, &other, cut) < 1e-12);
    }

    #[test]
    fn logits_are_finite_and_shaped(seed in any::<u64>(), toks in prop::collection::vec(0u32..19, 1..12)) {
        let m = CgtModel::<f32>::init(tiny(Variant::Hybrid), seed).unwrap();
        let l = m.logits(&toks).unwrap();
        prop_assert_eq!(l.dims2().unwrap(), (toks.len(), 19));
        prop_assert!(l.is_finite());
    }
}

#[test]
fn default_bidirectional_graph_leaks_future_tokens() {
    // With backward and forward edges, position 0 sees position 1 through
    // the sequential edge, so changing token 1 moves logits at position 0.
    let toks = [1, 2, 3, 4, 5, 6];
    let other = [1, 9, 3, 4, 5, 6];
    let hybrid = prefix_logits_change(tiny(Variant::Hybrid), 4, &toks, &other, 1);
    assert!(hybrid > 1e-6, "expected leakage, got {hybrid}");
    let transformer = prefix_logits_change(tiny(Variant::PureTransformer), 4, &toks, &other, 1);
    assert!(transformer < 1e-12);
}

#[test]
fn rejects_bad_inputs_and_configs() {
    let m = CgtModel::<f64>::init(tiny(Variant::Hybrid), 1).unwrap();
    assert!(m.logits(&[]).is_err());
    assert!(m.logits(&[19]).is_err());
    assert!(m.logits(&[0; 13]).is_err());
    let mut bad = tiny(Variant::Hybrid);
    bad.heads = 3;
    assert!(CgtModel::<f64>::init(bad, 1).is_err());
}

#[test]
fn initialization_is_seeded() {
    let a = CgtModel::<f32>::init(tiny(Variant::Hybrid), 8).unwrap();
    let b = CgtModel::<f32>::init(tiny(Variant::Hybrid), 8).unwrap();
    let c = CgtModel::<f32>::init(tiny(Variant::Hybrid), 9).unwrap();
    assert_eq!(a.embedding_table(), b.embedding_table());
    assert_ne!(a.embedding_table(), c.embedding_table());
    let wide: CgtModel<f64> = a.cast();
    assert_eq!(wide.logits(&[1, 2]).unwrap().rows(), 2);
}
