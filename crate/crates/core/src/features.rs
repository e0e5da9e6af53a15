//! Text featurization: character n-grams (n = 3..=5) hashed into a fixed
//! number of buckets with seeded FNV-1a 64, counts L2-normalized.
//!
//! The hash is fully specified so feature vectors are identical across
//! platforms and locales: `h = (FNV_OFFSET ^ seed)`, then for every UTF-8
//! byte of the n-gram `h = (h ^ byte) * FNV_PRIME (mod 2^64)`; the bucket is
//! `h mod dim`. Texts are truncated to `max_chars` characters before n-gram
//! extraction; texts shorter than 3 characters produce the zero vector.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Fixed featurizer hash seed; changing it changes every feature vector.
pub const HASH_SEED: u64 = 0x9e37_79b9_7f4a_7c15;

const NGRAM_MIN: usize = 3;
const NGRAM_MAX: usize = 5;

/// Seeded FNV-1a 64 over a byte slice.
pub fn fnv1a64_seeded(seed: u64, bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET ^ seed;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// A sparse, L2-normalized feature vector of a fixed dimension.
///
/// Entries are (bucket, weight) pairs sorted by bucket; buckets absent from
/// `entries` are zero. The zero vector (empty text) has no entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    dim: usize,
    entries: Vec<(u32, f64)>,
}

impl FeatureVector {
    /// The zero vector of the given dimension.
    pub fn zeros(dim: usize) -> Self {
        Self { dim, entries: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    /// Sparse (bucket, weight) entries in increasing bucket order.
    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for &(i, x) in &self.entries {
            v[i as usize] = x;
        }
        v
    }

    pub fn l2_norm(&self) -> f64 {
        self.entries.iter().map(|&(_, x)| x * x).sum::<f64>().sqrt()
    }

    /// Elementwise sum of two vectors of the same dimension.
    pub fn add(&self, other: &FeatureVector) -> FeatureVector {
        assert_eq!(self.dim, other.dim, "feature dimension mismatch");
        let mut map: BTreeMap<u32, f64> = self.entries.iter().copied().collect();
        for &(i, x) in &other.entries {
            *map.entry(i).or_insert(0.0) += x;
        }
        FeatureVector { dim: self.dim, entries: map.into_iter().collect() }
    }

    /// Build from raw (bucket, weight) pairs without normalization.
    /// Intended for tests and for dense/sparse conversions.
    pub fn from_entries(dim: usize, mut entries: Vec<(u32, f64)>) -> Self {
        entries.retain(|&(_, x)| x != 0.0);
        entries.sort_unstable_by_key(|&(i, _)| i);
        Self { dim, entries }
    }
}

/// Hash the character n-grams of `text` into `dim` buckets and L2-normalize.
pub fn featurize(text: &str, dim: usize, max_chars: usize) -> FeatureVector {
    featurize_seeded(text, dim, max_chars, HASH_SEED)
}

/// `featurize` with an explicit hash seed (exposed for golden tests).
pub fn featurize_seeded(text: &str, dim: usize, max_chars: usize, seed: u64) -> FeatureVector {
    assert!(dim > 0, "feature dimension must be positive");
    let chars: Vec<char> = text.chars().take(max_chars).collect();
    let mut counts: BTreeMap<u32, f64> = BTreeMap::new();
    let mut buf = String::with_capacity(4 * NGRAM_MAX);
    for n in NGRAM_MIN..=NGRAM_MAX {
        if chars.len() < n {
            break;
        }
        for win in chars.windows(n) {
            buf.clear();
            buf.extend(win.iter());
            let bucket = (fnv1a64_seeded(seed, buf.as_bytes()) % dim as u64) as u32;
            *counts.entry(bucket).or_insert(0.0) += 1.0;
        }
    }
    let norm = counts.values().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return FeatureVector::zeros(dim);
    }
    FeatureVector {
        dim,
        entries: counts.into_iter().map(|(i, c)| (i, c / norm)).collect(),
    }
}
