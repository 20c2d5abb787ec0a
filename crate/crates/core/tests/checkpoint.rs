use cgt::checkpoint::{load_checkpoint, save_checkpoint, write_atomic, Checkpoint, CheckpointMeta, MODEL_MAGIC};
use cgt::model::{CgtModel, ModelConfig, Variant};
use cgt::text::TokenizerSpec;
use cgt::CgtError;
use proptest::prelude::*;

fn small(variant: Variant) -> CgtModel<f32> {
    let mut c = ModelConfig::new(23, 8, 1, 1, 2, 10);
    c.ffn_dim = 12;
    CgtModel::init(c.with_variant(variant), 5).unwrap()
}

fn meta() -> CheckpointMeta {
    CheckpointMeta { seed: 9, stage: Some("stage2".into()), steps: 41, final_loss: Some(1.25), tokenizer: TokenizerSpec::ByteFallback }
}

#[test]
fn save_and_load_reproduce_the_model_exactly() {
    let dir = tempfile::tempdir().unwrap();
    for variant in [Variant::Hybrid, Variant::PureTransformer, Variant::PureGnn] {
        let model = small(variant);
        let path = dir.path().join(format!("{}.cgt", variant.as_str()));
        save_checkpoint(&path, &Checkpoint::from_model(&model, meta())).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(bytes[..4], MODEL_MAGIC);
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.meta, meta());
        assert_eq!(&back.config, model.config());
        let reloaded = back.into_model().unwrap();
        assert_eq!(reloaded.logits(&[1, 4, 2, 2]).unwrap(), model.logits(&[1, 4, 2, 2]).unwrap());
    }
}

#[test]
fn atomic_write_replaces_and_leaves_no_temp_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.bin");
    write_atomic(&path, b"first").unwrap();
    write_atomic(&path, b"second").unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), b"second");
    let names: Vec<_> = std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names.len(), 1);
    assert!(write_atomic(&dir.path().join("missing/sub/file"), b"x").is_err());
}

#[test]
fn corrupt_files_are_rejected_with_format_errors() {
    let good = Checkpoint::from_model(&small(Variant::Hybrid), meta()).to_bytes().unwrap();

    let mut magic = good.clone();
    magic[..4].copy_from_slice(b"CGTK");
    assert!(matches!(Checkpoint::from_bytes(&magic), Err(CgtError::Format(_))));

    let mut long_header = good.clone();
    long_header[4..8].copy_from_slice(&u32::MAX.to_le_bytes());
    assert!(matches!(Checkpoint::from_bytes(&long_header), Err(CgtError::Format(_))));

    let mut extra = good.clone();
    extra.extend_from_slice(&[0, 0, 0, 0]);
    assert!(matches!(Checkpoint::from_bytes(&extra), Err(CgtError::Format(_))));

    // A NaN in the last weight.
    let mut nan = good.clone();
    let n = nan.len();
    nan[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
    assert!(matches!(Checkpoint::from_bytes(&nan), Err(CgtError::NonFinite(_))));
}

#[test]
fn config_and_tensor_mismatch_is_detected() {
    let model = small(Variant::Hybrid);
    let mut ckpt = Checkpoint::from_model(&model, meta());
    ckpt.config.hidden_dim = 16;
    ckpt.config.heads = 2;
    let bytes = ckpt.to_bytes().unwrap();
    assert!(Checkpoint::from_bytes(&bytes).is_err());

    let mut wrong_variant = Checkpoint::from_model(&model, meta());
    wrong_variant.config.variant = Variant::PureTransformer;
    assert!(Checkpoint::from_bytes(&wrong_variant.to_bytes().unwrap()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn truncations_and_byte_flips_never_panic(cut in 0usize..4000, flip in 0usize..4000, bit in 0u8..8) {
        let good = Checkpoint::from_model(&small(Variant::PureGnn), CheckpointMeta::default()).to_bytes().unwrap();
        let cut = cut % good.len();
        prop_assert!(Checkpoint::from_bytes(&good[..cut]).is_err());
        let mut flipped = good.clone();
        let i = flip % good.len();
        flipped[i] ^= 1 << bit;
        // Any outcome but a panic is acceptable; a flip inside a weight may
        // still decode.
        if let Ok(c) = Checkpoint::from_bytes(&flipped) {
            prop_assert!(c.params.iter().all(|p| p.tensor.is_finite()));
        }
    }
}
