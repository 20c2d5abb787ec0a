//! Brute-force reference implementations shared by the integration suites.
//! None of these call into the library code they are compared against.

#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Directed edges `(src, dst) -> (weight, kind)` of the token graph, checked
/// pair by pair: offset 1 is sequential (1.0); offsets 3..=10 with cosine
/// above 0.7 are semantic (weight = cosine); otherwise offsets 2 and 3 are
/// skips weighted `exp(-0.5·offset)` when that exceeds 0.3. In strict causal
/// mode only edges pointing backwards (`src > dst`) are kept.
pub fn oracle_graph(rows: &[Vec<f64>], strict: bool) -> BTreeMap<(usize, usize), (f64, &'static str)> {
    let n = rows.len();
    let mut out = BTreeMap::new();
    for src in 0..n {
        for dst in 0..n {
            if src == dst || (strict && src < dst) {
                continue;
            }
            let off = src.abs_diff(dst);
            let c = cos(&rows[src], &rows[dst]);
            let edge = if off == 1 {
                Some((1.0, "sequential"))
            } else if (3..=10).contains(&off) && c > 0.7 {
                Some((c.min(1.0), "semantic"))
            } else if off == 2 || off == 3 {
                let w = (-0.5 * off as f64).exp();
                (w > 0.3).then_some((w, "skip"))
            } else {
                None
            };
            if let Some(e) = edge {
                out.insert((src, dst), e);
            }
        }
    }
    out
}

/// Rows clustered around a few prototypes so that semantic edges occur.
pub fn clustered_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    let protos: Vec<Vec<f64>> = (0..3).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let noise = rng.random_range(0.05..1.2);
    (0..n)
        .map(|_| {
            let p = &protos[rng.random_range(0..protos.len())];
            p.iter().map(|x| x + noise * rng.random_range(-1.0..1.0)).collect()
        })
        .collect()
}

fn ngrams(s: &[u32], n: usize) -> Vec<&[u32]> {
    if s.len() < n {
        return Vec::new();
    }
    (0..=s.len() - n).map(|i| &s[i..i + n]).collect()
}

/// Clipped n-gram matches: each candidate n-gram occurrence is matched
/// against a distinct unused reference occurrence.
pub fn clipped(c: &[u32], r: &[u32], n: usize) -> (usize, usize) {
    let cg = ngrams(c, n);
    let mut used = vec![false; ngrams(r, n).len()];
    let rg = ngrams(r, n);
    let mut matched = 0;
    for g in &cg {
        if let Some(k) = (0..rg.len()).find(|&k| !used[k] && rg[k] == *g) {
            used[k] = true;
            matched += 1;
        }
    }
    (matched, cg.len())
}

pub fn bleu_oracle(c: &[u32], r: &[u32], max_n: usize) -> f64 {
    if c.is_empty() {
        return 0.0;
    }
    let mut logs = Vec::new();
    for n in 1..=max_n {
        if c.len() < n && r.len() < n {
            continue;
        }
        let (m, t) = clipped(c, r, n);
        if m == 0 || t == 0 {
            return 0.0;
        }
        logs.push((m as f64 / t as f64).ln());
    }
    let bp = if c.len() < r.len() { (1.0 - r.len() as f64 / c.len() as f64).exp() } else { 1.0 };
    bp * (logs.iter().sum::<f64>() / logs.len() as f64).exp()
}

pub fn prf(overlap: usize, cand: usize, reference: usize) -> (f64, f64, f64) {
    let r = if reference == 0 { 0.0 } else { overlap as f64 / reference as f64 };
    let p = if cand == 0 { 0.0 } else { overlap as f64 / cand as f64 };
    let f = if r + p == 0.0 { 0.0 } else { 2.0 * r * p / (r + p) };
    (r, p, f)
}

pub fn rouge_n_oracle(c: &[u32], r: &[u32], n: usize) -> (f64, f64, f64) {
    if c.len() < n && r.len() < n {
        let v = if c == r { 1.0 } else { 0.0 };
        return (v, v, v);
    }
    let (m, t) = clipped(c, r, n);
    prf(m, t, ngrams(r, n).len())
}

fn is_subsequence(sub: &[u32], of: &[u32]) -> bool {
    let mut it = of.iter();
    sub.iter().all(|x| it.any(|y| y == x))
}

/// LCS by enumerating every subsequence of `a` (keep `a` short).
pub fn lcs_bruteforce(a: &[u32], b: &[u32]) -> usize {
    assert!(a.len() <= 16, "enumeration is exponential");
    let mut best = 0;
    for mask in 0u32..(1 << a.len()) {
        let k = mask.count_ones() as usize;
        if k <= best {
            continue;
        }
        let sub: Vec<u32> = (0..a.len()).filter(|i| mask >> i & 1 == 1).map(|i| a[i]).collect();
        if is_subsequence(&sub, b) {
            best = k;
        }
    }
    best
}

pub fn words(s: &[u32]) -> Vec<String> {
    s.iter().map(|x| format!("w{x}")).collect()
}

pub fn random_seq(rng: &mut ChaCha8Rng, max_len: usize, vocab: u32) -> Vec<u32> {
    let n = rng.random_range(0..=max_len);
    (0..n).map(|_| rng.random_range(0..vocab)).collect()
}

/// Counts word occurrences; used to check bag-of-words invariants.
pub fn counts(s: &[u32]) -> HashMap<u32, usize> {
    let mut m = HashMap::new();
    for &x in s {
        *m.entry(x).or_insert(0) += 1;
    }
    m
}

/// Rounds to `sig` significant figures.
pub fn round_sig(x: f64, sig: i32) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    let e = x.abs().log10().floor() as i32;
    let scale = 10f64.powi(sig - 1 - e);
    (x * scale).round() / scale
}
