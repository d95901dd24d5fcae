//! Direct re-implementations used as oracles by the integration tests.
//!
//! Everything here works from the raw sign vector (position 1 has the
//! largest |W|) with plain sets and loops, without touching library
//! internals.

#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Signs with a denser block of positives at the top.
pub fn random_signs(p: usize, rng: &mut ChaCha8Rng) -> Vec<bool> {
    (0..p).map(|i| rng.random_bool(if i < p / 2 { 0.8 } else { 0.5 })).collect()
}

/// Positives strictly above the `v`-th negative.
pub fn reference_set(signs: &[bool], v: usize) -> BTreeSet<usize> {
    let mut out = BTreeSet::new();
    let mut negs = 0;
    for (i, &s) in signs.iter().enumerate() {
        if s {
            out.insert(i + 1);
        } else {
            negs += 1;
            if negs == v {
                break;
            }
        }
    }
    out
}

/// `min_i min{|R|, k_i - 1 + |R \ S(v_i)|}`.
pub fn kji_numerator(signs: &[bool], v: &[usize], k: &[u64], r: &BTreeSet<usize>) -> u64 {
    let mut best = r.len() as u64;
    for (&vi, &ki) in v.iter().zip(k) {
        let s = reference_set(signs, vi);
        let outside = r.difference(&s).count() as u64;
        best = best.min(ki - 1 + outside);
    }
    best
}

/// `min_i min{|R|, |R \ Ŝ_i| + floor(c (1 + i - |Ŝ_i|))}` over `i = 1..=p`.
pub fn kr_numerator(signs: &[bool], alpha: f64, r: &BTreeSet<usize>) -> u64 {
    let c = (1.0 / alpha).ln() / (2.0 - alpha).ln();
    let mut best = r.len() as u64;
    for i in 1..=signs.len() {
        let s: BTreeSet<usize> = (1..=i).filter(|&j| signs[j - 1]).collect();
        let outside = r.difference(&s).count() as u64;
        let budget = (c * (1 + i - s.len()) as f64).floor() as u64;
        best = best.min(outside + budget);
    }
    best
}

/// `P(Bin(n, 1/2) >= k)` by a probability-scale Pascal recursion.
pub fn binomial_upper_tail(n: usize, k: usize) -> f64 {
    let mut row = vec![1.0f64];
    for _ in 0..n {
        let mut next = vec![0.0; row.len() + 1];
        for (j, &x) in row.iter().enumerate() {
            next[j] += x / 2.0;
            next[j + 1] += x / 2.0;
        }
        row = next;
    }
    row.iter().skip(k).sum()
}

/// `P(NB(v, 1/2) >= k)` through the binomial event of the same probability.
pub fn nb_tail(v: usize, k: usize) -> f64 {
    if k == 0 {
        1.0
    } else {
        binomial_upper_tail(k + v - 1, k)
    }
}

/// `N^p(v)` for a sign sequence of length `p`.
pub fn early_stopped(signs: &[bool], v: usize) -> usize {
    reference_set(signs, v).len()
}

/// `B^p(n)`: positives among the first `min(n, p)` signs.
pub fn prefix_positives(signs: &[bool], n: usize) -> usize {
    signs.iter().take(n).filter(|&&s| s).count()
}

pub fn mask_set(mask: u64) -> BTreeSet<usize> {
    (0..64).filter(|b| mask >> b & 1 == 1).map(|b| b + 1).collect()
}
