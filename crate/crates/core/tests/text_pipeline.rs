use std::collections::HashMap;

use cgt::text::{chunk_corpus, chunk_spans, load_corpus, pretokenize, Corpus, Tokenizer, TokenizerMode, TokenizerSpec};
use proptest::prelude::*;

/// The GPT-2 byte-to-printable-char table, rebuilt from its definition.
fn gpt2_byte_chars() -> Vec<char> {
    let mut printable: Vec<u32> = (b'!' as u32..=b'~' as u32).chain(0xA1..=0xAC).chain(0xAE..=0xFF).collect();
    let mut chars: Vec<u32> = printable.clone();
    let mut extra = 0;
    for b in 0..256u32 {
        if !printable.contains(&b) {
            printable.push(b);
            chars.push(256 + extra);
            extra += 1;
        }
    }
    let mut table = vec!['\0'; 256];
    for (b, c) in printable.iter().zip(chars) {
        table[*b as usize] = char::from_u32(c).unwrap();
    }
    table
}

fn small_bpe() -> Tokenizer {
    let mut vocab: HashMap<String, u32> = HashMap::new();
    for c in gpt2_byte_chars() {
        let id = vocab.len() as u32;
        vocab.insert(c.to_string(), id);
    }
    for t in ["in", "ing", "Ġa", "Ġan", "er", "Ġth", "Ġthe"] {
        let id = vocab.len() as u32;
        vocab.insert(t.into(), id);
    }
    let merges = "#version: 0.2\ni n\nin g\nĠ a\nĠa n\ne r\nĠ t\nĠt h\nĠth e\n";
    Tokenizer::from_bpe(&serde_json::to_vec(&vocab).unwrap(), merges).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1200))]

    #[test]
    fn byte_fallback_round_trips(s in any::<String>()) {
        let t = Tokenizer::byte_fallback();
        let ids = t.encode(&s);
        prop_assert_eq!(ids.len(), s.len());
        prop_assert_eq!(t.decode(&ids).unwrap(), s);
    }

    #[test]
    fn bpe_round_trips(s in "[ a-z0-9ingerth.,'\\n\\t-]{0,60}|\\PC{0,30}") {
        let t = small_bpe();
        let ids = t.encode(&s);
        prop_assert!(ids.iter().all(|&i| (i as usize) < t.vocab_size() && !t.is_special(i)));
        prop_assert_eq!(t.decode(&ids).unwrap(), s);
    }

    #[test]
    fn pretokens_cover_input(s in "\\PC{0,50}") {
        prop_assert_eq!(pretokenize(&s).concat(), s);
    }

    #[test]
    fn chunks_cover_every_token(len in 0usize..400, size in 1usize..64, overlap_frac in 0.0f64..0.95) {
        let overlap = ((size as f64) * overlap_frac) as usize;
        let spans = chunk_spans(len, size, overlap).unwrap();
        let mut covered = vec![false; len];
        for &(s, e) in &spans {
            prop_assert!(s < e && e <= len && e - s <= size);
            covered[s..e].iter_mut().for_each(|c| *c = true);
        }
        prop_assert!(covered.iter().all(|&c| c));
        for w in spans.windows(2) {
            prop_assert_eq!(w[1].0, w[0].0 + size - overlap);
        }
    }
}

#[test]
fn bpe_applies_merges_in_rank_order() {
    let t = small_bpe();
    assert_eq!(t.mode(), TokenizerMode::LoadedBpe);
    let ids = t.encode(" the singer");
    let labels: Vec<String> = ids.iter().map(|&i| t.token_label(i)).collect();
    assert_eq!(labels.first().map(String::as_str), Some(" the"));
    assert!(labels.contains(&"ing".to_string()));
    assert!(labels.contains(&"er".to_string()));
    // Specials were appended after the loaded vocabulary.
    assert_eq!(t.eos_id() as usize, 256 + 7);
    assert_eq!(t.pad_id() as usize, 256 + 8);
}

#[test]
fn corpus_loading_is_ordered_and_skips_blank_files() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("b.txt"), "y").unwrap();
    std::fs::write(dir.path().join("a.txt"), "x").unwrap();
    std::fs::write(dir.path().join("c.txt"), "  \n").unwrap();
    std::fs::write(dir.path().join("notes.md"), "ignored").unwrap();
    let c = load_corpus(dir.path()).unwrap();
    let names: Vec<&str> = c.documents.iter().map(|d| d.name.as_str()).collect();
    assert_eq!(names, ["a.txt", "b.txt"]);
    assert_eq!(c.documents[1].text, "y");

    let empty = tempfile::tempdir().unwrap();
    assert!(load_corpus(empty.path()).is_err());
    std::fs::write(empty.path().join("bad.txt"), [0xff, 0xfe]).unwrap();
    assert!(load_corpus(empty.path()).is_err());
}

#[test]
fn bundled_corpora_have_the_documented_sizes() {
    let tok = Tokenizer::byte_fallback();
    let domain = load_corpus(&cgt::bundled_data_dir().join("domain")).unwrap();
    let general = load_corpus(&cgt::bundled_data_dir().join("general")).unwrap();
    assert_eq!(domain.stats(&tok).documents, 151);
    assert_eq!(general.len(), 200);
    assert!(domain.documents.iter().any(|d| d.text.contains("ARC600")));
}

#[test]
fn chunks_map_back_to_document_text() {
    let tok = Tokenizer::byte_fallback();
    let corpus = Corpus::from_texts(&["alpha beta gamma delta epsilon", "zeta eta theta"]);
    let chunks = chunk_corpus(&corpus, &tok, 8, 2).unwrap();
    for c in &chunks {
        let doc = &corpus.documents[c.doc_id].text;
        let ids = tok.encode(doc);
        assert_eq!(tok.decode(&ids[c.span.0..c.span.1]).unwrap(), c.text);
    }
    let ids: Vec<usize> = chunks.iter().map(|c| c.chunk_id).collect();
    assert_eq!(ids, (0..chunks.len()).collect::<Vec<_>>());
    assert!(chunk_corpus(&corpus, &tok, 4, 4).is_err());
}

#[test]
fn tokenizer_spec_serializes_with_mode_tag() {
    let json = serde_json::to_string(&TokenizerSpec::ByteFallback).unwrap();
    assert_eq!(json, r#"{"mode":"byte-fallback"}"#);
    assert_eq!(TokenizerSpec::ByteFallback.load().unwrap().vocab_size(), 258);
}
