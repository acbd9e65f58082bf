//! Hashed word n-gram features.
//!
//! Every word n-gram (n up to `ngram_max`, words joined by a single space)
//! is hashed with XXH64 seeded by `hash_seed`; the feature index is the hash
//! modulo `dim`. Colliding n-grams add up. Values are non-negative counts,
//! optionally L2-normalized.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use xxhash_rust::xxh64::xxh64;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FeaturizeError {
    #[error("dimension must be a power of two >= 2, got {0}")]
    BadDim(usize),
    #[error("ngram_max must be 1, 2 or 3, got {0}")]
    BadNgram(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeaturizerConfig {
    pub dim: usize,
    pub ngram_max: usize,
    pub normalize: bool,
    pub hash_seed: u64,
}

impl Default for FeaturizerConfig {
    fn default() -> Self {
        Self {
            dim: 1 << 18,
            ngram_max: 2,
            normalize: true,
            hash_seed: 0,
        }
    }
}

impl FeaturizerConfig {
    pub fn validate(&self) -> Result<(), FeaturizeError> {
        if self.dim < 2 || !self.dim.is_power_of_two() {
            return Err(FeaturizeError::BadDim(self.dim));
        }
        if !(1..=3).contains(&self.ngram_max) {
            return Err(FeaturizeError::BadNgram(self.ngram_max));
        }
        Ok(())
    }

    /// Stable fingerprint stored in model checkpoints.
    pub fn fingerprint(&self) -> u64 {
        let desc = format!(
            "hashed-ngrams/xxh64;dim={};ngram_max={};normalize={};seed={}",
            self.dim, self.ngram_max, self.normalize, self.hash_seed
        );
        xxh64(desc.as_bytes(), 0)
    }

    pub fn index_of(&self, ngram: &str) -> u32 {
        (xxh64(ngram.as_bytes(), self.hash_seed) % self.dim as u64) as u32
    }
}

/// Sparse vector with strictly increasing indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub dim: usize,
    pub entries: Vec<(u32, f64)>,
}

impl FeatureVector {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            entries: Vec::new(),
        }
    }

    /// Build from unsorted (index, value) pairs, summing duplicates.
    pub fn from_pairs(dim: usize, mut pairs: Vec<(u32, f64)>) -> Self {
        pairs.sort_by_key(|p| p.0);
        let mut entries: Vec<(u32, f64)> = Vec::with_capacity(pairs.len());
        for (i, v) in pairs {
            match entries.last_mut() {
                Some(last) if last.0 == i => last.1 += v,
                _ => entries.push((i, v)),
            }
        }
        Self { dim, entries }
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn l2_norm(&self) -> f64 {
        self.entries.iter().map(|e| e.1 * e.1).sum::<f64>().sqrt()
    }
}

pub fn featurize(text: &str, cfg: &FeaturizerConfig) -> FeatureVector {
    let words: Vec<&str> = text.split(' ').filter(|w| !w.is_empty()).collect();
    let mut pairs = Vec::with_capacity(words.len() * cfg.ngram_max);
    let mut buf = String::new();
    for n in 1..=cfg.ngram_max {
        for gram in words.windows(n) {
            buf.clear();
            for (i, w) in gram.iter().enumerate() {
                if i > 0 {
                    buf.push(' ');
                }
                buf.push_str(w);
            }
            pairs.push((cfg.index_of(&buf), 1.0));
        }
    }
    let mut v = FeatureVector::from_pairs(cfg.dim, pairs);
    if cfg.normalize {
        let norm = v.l2_norm();
        if norm > 0.0 {
            for e in &mut v.entries {
                e.1 /= norm;
            }
        }
    }
    v
}

/// Elementwise [`featurize`]; runs in parallel, output order matches input.
pub fn featurize_batch<S: AsRef<str> + Sync>(
    texts: &[S],
    cfg: &FeaturizerConfig,
) -> Vec<FeatureVector> {
    texts.par_iter().map(|t| featurize(t.as_ref(), cfg)).collect()
}

/// Write a sparse `row,index,value` triplet CSV.
pub fn write_triplets<W: Write>(mut w: W, rows: &[FeatureVector]) -> std::io::Result<()> {
    writeln!(w, "row,index,value")?;
    for (r, v) in rows.iter().enumerate() {
        for &(i, x) in &v.entries {
            writeln!(w, "{r},{i},{x:?}")?;
        }
    }
    Ok(())
}
