//! Independent reference implementations used by the oracle tests.

use std::collections::HashMap;

use ila_core::retrieval::VectorIndex;

/// Every entry scored with a plain cosine, sorted by score descending then
/// chunk id ascending, cut at `k`.
pub fn brute_force_rank(index: &VectorIndex, query: &[f64], k: usize) -> Vec<(String, f64)> {
    let mut scored: Vec<(String, f64)> = index
        .entries
        .iter()
        .map(|e| {
            let (mut dot, mut qq, mut ee) = (0.0f64, 0.0f64, 0.0f64);
            for (a, b) in query.iter().zip(&e.vector.values) {
                dot += a * b;
                qq += a * a;
                ee += b * b;
            }
            let s = if qq == 0.0 || ee == 0.0 { 0.0 } else { (dot / (qq.sqrt() * ee.sqrt())).clamp(-1.0, 1.0) };
            (e.chunk_id.clone(), s)
        })
        .collect();
    for i in 1..scored.len() {
        let mut j = i;
        while j > 0 && before(&scored[j], &scored[j - 1]) {
            scored.swap(j, j - 1);
            j -= 1;
        }
    }
    scored.truncate(k);
    scored
}

fn before(a: &(String, f64), b: &(String, f64)) -> bool {
    a.1 > b.1 || (a.1 == b.1 && a.0 < b.0)
}

/// Bag-of-words feature hashing written from the description: lowercase
/// alphanumeric/underscore tokens, 64-bit FNV-1a, bucket = hash mod dim,
/// counts then L2 normalization.
pub fn hash_embed(text: &str, dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    let mut token = String::new();
    let flush = |token: &mut String, v: &mut Vec<f64>| {
        if !token.is_empty() {
            let mut h: u64 = 14695981039346656037;
            for byte in token.to_lowercase().bytes() {
                h ^= byte as u64;
                h = h.wrapping_mul(1099511628211);
            }
            v[(h % dim as u64) as usize] += 1.0;
            token.clear();
        }
    };
    for c in text.chars() {
        if c.is_alphanumeric() || c == '_' {
            token.push(c);
        } else {
            flush(&mut token, &mut v);
        }
    }
    flush(&mut token, &mut v);
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in &mut v {
            *x /= norm;
        }
    }
    v
}

/// Adjacent-pair recount.
pub fn pair_counts(seqs: &[Vec<String>]) -> HashMap<(String, String), u64> {
    let mut counts = HashMap::new();
    for seq in seqs {
        let mut prev: Option<&String> = None;
        for cur in seq {
            if let Some(p) = prev {
                *counts.entry((p.clone(), cur.clone())).or_insert(0) += 1;
            }
            prev = Some(cur);
        }
    }
    counts
}

/// Stage membership from stage boundaries: stage `s` of `n` starts at the
/// first index `i` with `i * stages >= s * n`.
pub fn stage_counts(seqs: &[Vec<String>], stages: usize) -> HashMap<(usize, String), u64> {
    let mut counts = HashMap::new();
    for seq in seqs {
        let n = seq.len();
        if n == 0 {
            continue;
        }
        let starts: Vec<usize> = (0..=stages).map(|s| (s * n).div_ceil(stages)).collect();
        for s in 0..stages {
            for label in &seq[starts[s]..starts[s + 1]] {
                *counts.entry((s, label.clone())).or_insert(0) += 1;
            }
        }
    }
    counts
}

/// `100 * num / den` in hundredths by long division, ties rounded up.
pub fn percent_hundredths(num: u64, den: u64) -> u64 {
    let scaled = num * 10_000;
    let (q, r) = (scaled / den, scaled % den);
    if 2 * r >= den {
        q + 1
    } else {
        q
    }
}
