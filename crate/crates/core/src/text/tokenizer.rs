use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CgtError, Result};

pub type TokenId = u32;

const BYTE_PAD: TokenId = 256;
const BYTE_EOS: TokenId = 257;
const EOS_TOKEN: &str = "<|endoftext|>";
const PAD_TOKEN: &str = "<|pad|>";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TokenizerMode {
    LoadedBpe,
    ByteFallback,
}

/// Either raw bytes (ids 0..=255, then pad and eos) or a GPT-2-style
/// byte-level BPE loaded from `vocab.json` + `merges.txt`.
#[derive(Clone, Debug)]
pub struct Tokenizer {
    mode: TokenizerMode,
    vocab: HashMap<String, TokenId>,
    /// id → token bytes (specials map to empty).
    pieces: Vec<Vec<u8>>,
    ranks: HashMap<(String, String), usize>,
    byte_to_char: [char; 256],
    pad_id: TokenId,
    eos_id: TokenId,
}

/// GPT-2's reversible byte → printable-char table.
fn byte_table() -> [char; 256] {
    let mut table = ['\0'; 256];
    let mut extra = 0u32;
    for b in 0..=255u8 {
        let printable = (b'!'..=b'~').contains(&b) || (0xA1..=0xAC).contains(&b) || (0xAE..=0xFF).contains(&b);
        table[b as usize] = if printable {
            char::from(b)
        } else {
            let c = char::from_u32(256 + extra).expect("valid code point");
            extra += 1;
            c
        };
    }
    table
}

impl Tokenizer {
    pub fn byte_fallback() -> Self {
        let mut pieces: Vec<Vec<u8>> = (0..=255u8).map(|b| vec![b]).collect();
        pieces.push(Vec::new());
        pieces.push(Vec::new());
        Tokenizer {
            mode: TokenizerMode::ByteFallback,
            vocab: HashMap::new(),
            pieces,
            ranks: HashMap::new(),
            byte_to_char: byte_table(),
            pad_id: BYTE_PAD,
            eos_id: BYTE_EOS,
        }
    }

    /// Loads a byte-level BPE. The vocab maps token strings (in the printable
    /// byte alphabet) to dense ids; merges are ranked by line order, and lines
    /// starting with `#` are skipped. Missing eos/pad tokens are appended.
    pub fn from_bpe_files(vocab_path: &Path, merges_path: &Path) -> Result<Self> {
        let vocab_bytes = std::fs::read(vocab_path)?;
        let merges = std::fs::read_to_string(merges_path)?;
        Self::from_bpe(&vocab_bytes, &merges)
    }

    pub fn from_bpe(vocab_json: &[u8], merges: &str) -> Result<Self> {
        let mut vocab: HashMap<String, TokenId> = serde_json::from_slice(vocab_json)
            .map_err(|e| CgtError::Tokenizer(format!("vocab file: {e}")))?;
        let table = byte_table();
        let char_to_byte: HashMap<char, u8> = table.iter().enumerate().map(|(b, &c)| (c, b as u8)).collect();

        let n = vocab.len();
        let mut by_id: Vec<Option<&str>> = vec![None; n];
        for (tok, &id) in &vocab {
            let slot = by_id
                .get_mut(id as usize)
                .ok_or_else(|| CgtError::Tokenizer(format!("id {id} for {tok:?} is not dense in 0..{n}")))?;
            if slot.is_some() {
                return Err(CgtError::Tokenizer(format!("id {id} assigned twice")));
            }
            *slot = Some(tok);
        }
        let mut pieces = Vec::with_capacity(n + 2);
        for tok in by_id.into_iter().map(|t| t.expect("dense ids checked above")) {
            if tok == EOS_TOKEN || tok == PAD_TOKEN {
                pieces.push(Vec::new());
                continue;
            }
            let bytes = tok
                .chars()
                .map(|c| char_to_byte.get(&c).copied())
                .collect::<Option<Vec<u8>>>()
                .ok_or_else(|| CgtError::Tokenizer(format!("token {tok:?} uses characters outside the byte alphabet")))?;
            pieces.push(bytes);
        }
        for c in table {
            if !vocab.contains_key(&c.to_string()) {
                return Err(CgtError::Tokenizer(format!("vocab lacks the single-byte token {c:?}")));
            }
        }

        let mut ranks = HashMap::new();
        for line in merges.lines() {
            let line = line.trim_end_matches('\r');
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split(' ');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(a), Some(b), None) if !a.is_empty() && !b.is_empty() => {
                    let rank = ranks.len();
                    ranks.entry((a.to_string(), b.to_string())).or_insert(rank);
                }
                _ => return Err(CgtError::Tokenizer(format!("malformed merge line {line:?}"))),
            }
        }

        let mut special = |name: &str, vocab: &mut HashMap<String, TokenId>| -> TokenId {
            if let Some(&id) = vocab.get(name) {
                return id;
            }
            let id = pieces.len() as TokenId;
            pieces.push(Vec::new());
            vocab.insert(name.to_string(), id);
            id
        };
        let eos_id = special(EOS_TOKEN, &mut vocab);
        let pad_id = special(PAD_TOKEN, &mut vocab);
        Ok(Tokenizer { mode: TokenizerMode::LoadedBpe, vocab, pieces, ranks, byte_to_char: table, pad_id, eos_id })
    }

    pub fn mode(&self) -> TokenizerMode {
        self.mode
    }

    pub fn vocab_size(&self) -> usize {
        self.pieces.len()
    }

    pub fn pad_id(&self) -> TokenId {
        self.pad_id
    }

    pub fn eos_id(&self) -> TokenId {
        self.eos_id
    }

    pub fn is_special(&self, id: TokenId) -> bool {
        id == self.pad_id || id == self.eos_id
    }

    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        match self.mode {
            TokenizerMode::ByteFallback => text.bytes().map(TokenId::from).collect(),
            TokenizerMode::LoadedBpe => {
                let mut out = Vec::new();
                for piece in pretokenize(text) {
                    self.bpe(piece, &mut out);
                }
                out
            }
        }
    }

    fn bpe(&self, piece: &str, out: &mut Vec<TokenId>) {
        let mut symbols: Vec<String> = piece.bytes().map(|b| self.byte_to_char[b as usize].to_string()).collect();
        while symbols.len() > 1 {
            let best = symbols
                .windows(2)
                .enumerate()
                .filter_map(|(i, w)| self.ranks.get(&(w[0].clone(), w[1].clone())).map(|&r| (r, i)))
                .min();
            let Some((rank, _)) = best else { break };
            let mut merged = Vec::with_capacity(symbols.len());
            let mut i = 0;
            while i < symbols.len() {
                if i + 1 < symbols.len() && self.ranks.get(&(symbols[i].clone(), symbols[i + 1].clone())) == Some(&rank) {
                    merged.push(format!("{}{}", symbols[i], symbols[i + 1]));
                    i += 2;
                } else {
                    merged.push(std::mem::take(&mut symbols[i]));
                    i += 1;
                }
            }
            symbols = merged;
        }
        for s in symbols {
            match self.vocab.get(&s) {
                Some(&id) => out.push(id),
                // A merge produced something the vocab lacks; fall back to bytes.
                None => out.extend(s.chars().map(|c| self.vocab[&c.to_string()])),
            }
        }
    }

    /// Concatenates token bytes; special ids contribute nothing. Invalid
    /// UTF-8 (possible only for id sequences no encode call produces) is
    /// replaced lossily.
    pub fn decode(&self, ids: &[TokenId]) -> Result<String> {
        let mut bytes = Vec::new();
        for &id in ids {
            let piece = self
                .pieces
                .get(id as usize)
                .ok_or_else(|| CgtError::Tokenizer(format!("id {id} outside vocab of {}", self.pieces.len())))?;
            bytes.extend_from_slice(piece);
        }
        Ok(match String::from_utf8(bytes) {
            Ok(s) => s,
            Err(e) => String::from_utf8_lossy(e.as_bytes()).into_owned(),
        })
    }

    /// Human-readable label for a single id (graph node labels).
    pub fn token_label(&self, id: TokenId) -> String {
        if id == self.eos_id {
            return EOS_TOKEN.into();
        }
        if id == self.pad_id {
            return PAD_TOKEN.into();
        }
        self.pieces
            .get(id as usize)
            .map(|p| String::from_utf8_lossy(p).into_owned())
            .unwrap_or_default()
    }
}

fn is_letter(c: char) -> bool {
    c.is_alphabetic()
}

fn is_number(c: char) -> bool {
    c.is_numeric()
}

/// GPT-2 pre-tokenization: `'s|'t|'re|'ve|'m|'ll|'d| ?\p{L}+| ?\p{N}+|
/// ?[^\s\p{L}\p{N}]+|\s+(?!\S)|\s+`, tried in that order at each position.
pub fn pretokenize(text: &str) -> Vec<&str> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let at = |k: usize| chars.get(k).map(|&(_, c)| c);
    let offset = |k: usize| chars.get(k).map_or(text.len(), |&(o, _)| o);
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let end = match_at(&chars, i, &at);
        out.push(&text[offset(i)..offset(end)]);
        i = end;
    }
    out
}

fn match_at(chars: &[(usize, char)], i: usize, at: &impl Fn(usize) -> Option<char>) -> usize {
    const CONTRACTIONS: [&str; 7] = ["'s", "'t", "'re", "'ve", "'m", "'ll", "'d"];
    if at(i) == Some('\'') {
        for c in CONTRACTIONS {
            let tail: Vec<char> = c.chars().skip(1).collect();
            if tail.iter().enumerate().all(|(k, &t)| at(i + 1 + k) == Some(t)) {
                return i + 1 + tail.len();
            }
        }
    }
    let run = |start: usize, pred: &dyn Fn(char) -> bool| {
        let mut k = start;
        while at(k).is_some_and(pred) {
            k += 1;
        }
        k
    };
    let body = if at(i) == Some(' ') { i + 1 } else { i };
    let classes: [&dyn Fn(char) -> bool; 3] = [
        &|c| is_letter(c),
        &|c| is_number(c),
        &|c| !c.is_whitespace() && !is_letter(c) && !is_number(c),
    ];
    for class in classes {
        let end = run(body, class);
        if end > body {
            return end;
        }
    }
    let ws_end = run(i, &|c: char| c.is_whitespace());
    debug_assert!(ws_end > i, "every char is matched by some alternative");
    if ws_end == chars.len() || ws_end - i == 1 {
        // Either trailing whitespace, or a lone whitespace char before a
        // non-space that ` ?X+` did not absorb.
        return ws_end;
    }
    // Leave the last whitespace char to prefix the next word.
    ws_end - 1
}
