//! Deterministic text featurization.
//!
//! Sentences are mapped to fixed-width vectors by counting character
//! n-grams into hashed buckets (FNV-1a 64-bit, bucket = hash mod
//! `num_buckets`) and L2-normalizing the counts. No vocabulary, no
//! external resources, identical output on every platform.

use serde::{Deserialize, Serialize};

use crate::backend;
use crate::error::{Error, Result};

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// FNV-1a 64-bit over a byte string.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h = (h ^ u64::from(b)).wrapping_mul(FNV_PRIME);
    }
    h
}

/// Featurizer settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatConfig {
    /// Character n-gram length.
    pub ngram_size: usize,
    /// Number of hash buckets (the feature dimension).
    pub num_buckets: usize,
    /// Lowercase the text before extracting n-grams.
    pub lowercase: bool,
}

impl Default for FeatConfig {
    fn default() -> Self {
        FeatConfig {
            ngram_size: 3,
            num_buckets: 2048,
            lowercase: true,
        }
    }
}

impl FeatConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_buckets < 2 {
            return Err(Error::config(format!(
                "num_buckets must be >= 2, got {}",
                self.num_buckets
            )));
        }
        if self.ngram_size < 1 {
            return Err(Error::config("ngram_size must be >= 1"));
        }
        Ok(())
    }
}

/// L2-normalized bucket counts for one text. All-zero exactly when the
/// text has no n-gram of the configured length.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    values: Vec<f64>,
}

impl FeatureVector {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Hash the character n-grams of `text` into bucket counts and
/// L2-normalize. Deterministic; empty or too-short texts give the
/// all-zero vector.
pub fn featurize(text: &str, cfg: &FeatConfig) -> FeatureVector {
    let mut counts = vec![0u32; cfg.num_buckets];
    let lowered;
    let text = if cfg.lowercase {
        lowered = text.to_lowercase();
        &lowered
    } else {
        text
    };
    let chars: Vec<char> = text.chars().collect();
    if chars.len() >= cfg.ngram_size {
        let mut buf = String::with_capacity(cfg.ngram_size * 4);
        for window in chars.windows(cfg.ngram_size) {
            buf.clear();
            buf.extend(window.iter());
            let bucket = (fnv1a64(buf.as_bytes()) % cfg.num_buckets as u64) as usize;
            counts[bucket] += 1;
        }
    }
    let sum_sq: f64 = counts.iter().map(|&c| f64::from(c) * f64::from(c)).sum();
    let values = if sum_sq == 0.0 {
        vec![0.0; cfg.num_buckets]
    } else {
        let inv = 1.0 / sum_sq.sqrt();
        counts.iter().map(|&c| f64::from(c) * inv).collect()
    };
    FeatureVector { values }
}

/// Featurize many texts, one vector per input, in input order.
pub fn featurize_batch(texts: &[&str], cfg: &FeatConfig) -> Vec<FeatureVector> {
    backend::map_indexed(texts.len(), |i| featurize(texts[i], cfg))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_is_zero_vector() {
        let v = featurize("", &FeatConfig::default());
        assert!(v.is_zero());
        assert_eq!(v.dim(), 2048);
    }

    #[test]
    fn text_shorter_than_ngram_is_zero_vector() {
        let cfg = FeatConfig::default();
        assert!(featurize("ab", &cfg).is_zero());
    }

    #[test]
    fn single_ngram_has_unit_bucket() {
        let v = featurize("aaa", &FeatConfig::default());
        let nonzero: Vec<f64> = v.values().iter().copied().filter(|&x| x != 0.0).collect();
        assert_eq!(nonzero, vec![1.0]);
    }

    #[test]
    fn two_ngrams_split_the_norm() {
        // "abcd" with trigrams -> "abc" and "bcd"; verify with an
        // independent hash evaluation that they land in distinct buckets.
        let cfg = FeatConfig::default();
        let b1 = (fnv1a64(b"abc") % cfg.num_buckets as u64) as usize;
        let b2 = (fnv1a64(b"bcd") % cfg.num_buckets as u64) as usize;
        assert_ne!(b1, b2, "hash collision would change the expected value");
        let v = featurize("abcd", &cfg);
        let expected = 1.0 / 2.0_f64.sqrt();
        assert!((v.values()[b1] - expected).abs() < 1e-12);
        assert!((v.values()[b2] - expected).abs() < 1e-12);
        let nonzero = v.values().iter().filter(|&&x| x != 0.0).count();
        assert_eq!(nonzero, 2);
        assert!((v.norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn deterministic_across_calls() {
        let cfg = FeatConfig::default();
        assert_eq!(featurize("hello world", &cfg), featurize("hello world", &cfg));
    }

    #[test]
    fn lowercase_folds_case() {
        let cfg = FeatConfig::default();
        assert_eq!(featurize("Hello", &cfg), featurize("hello", &cfg));
        let cfg_sensitive = FeatConfig {
            lowercase: false,
            ..FeatConfig::default()
        };
        assert_ne!(
            featurize("Hello", &cfg_sensitive),
            featurize("hello", &cfg_sensitive)
        );
    }

    #[test]
    fn repeated_ngrams_accumulate_counts() {
        // "aaaa" -> "aaa" twice: still one bucket, normalized to 1.0.
        let v = featurize("aaaa", &FeatConfig::default());
        let nonzero: Vec<f64> = v.values().iter().copied().filter(|&x| x != 0.0).collect();
        assert_eq!(nonzero, vec![1.0]);
    }

    #[test]
    fn batch_matches_single_calls() {
        let cfg = FeatConfig::default();
        let texts = ["one", "two", "three"];
        let batch = featurize_batch(&texts, &cfg);
        for (t, v) in texts.iter().zip(&batch) {
            assert_eq!(v, &featurize(t, &cfg));
        }
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = FeatConfig {
            num_buckets: 1,
            ..FeatConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = FeatConfig {
            ngram_size: 0,
            ..FeatConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
