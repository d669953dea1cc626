//! Unit-norm embedding vectors and the deterministic local hashing embedder.
//!
//! The local embedder lowercases the text, splits it on non-alphanumeric
//! characters, and hashes every token and every adjacent token pair into
//! `dim` buckets with a ±1 sign taken from a second, independently seeded
//! hash. The accumulated counts are L2-normalized. Texts sharing words and
//! word pairs therefore land close together, and the output depends only on
//! `(text, dim)`.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

/// Dimension used when no provider dictates one.
pub const DEFAULT_DIM: usize = 768;

/// Allowed deviation of a stored vector's L2 norm from 1.
pub const NORM_TOLERANCE: f64 = 1e-6;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
const BUCKET_SEED: u64 = 0x9e37_79b9_7f4a_7c15;
const SIGN_SEED: u64 = 0xd1b5_4a32_d192_ed03;
const PAIR_SEPARATOR: u8 = 0x1f;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EmbeddingError {
    #[error("text is empty after trimming whitespace")]
    EmptyText,
    #[error("embedding dimension must be positive")]
    ZeroDimension,
    #[error("vector has zero norm and cannot be normalized")]
    ZeroNorm,
    #[error("vector contains non-finite components")]
    NonFinite,
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
}

/// A fixed-length, L2-normalized real vector.
///
/// Constructed only through [`EmbeddingVector::normalize`] (or the snapshot
/// decoder, which restores previously normalized values bit for bit).
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    /// Scales `values` to unit L2 norm.
    pub fn normalize(mut values: Vec<f64>) -> Result<Self, EmbeddingError> {
        if values.is_empty() {
            return Err(EmbeddingError::ZeroDimension);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite);
        }
        let norm = l2_norm(&values);
        if norm == 0.0 || !norm.is_finite() {
            return Err(EmbeddingError::ZeroNorm);
        }
        for v in &mut values {
            *v /= norm;
        }
        Ok(Self { values })
    }

    pub(crate) fn from_stored(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.values)
    }

    /// The antipodal vector. Still unit norm.
    pub fn negated(&self) -> Self {
        Self {
            values: self.values.iter().map(|v| -v).collect(),
        }
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

fn l2_norm(values: &[f64]) -> f64 {
    libm::sqrt(values.iter().map(|v| v * v).sum::<f64>())
}

/// Cosine similarity of two unit vectors: their dot product clamped to [-1, 1].
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EmbeddingError> {
    if a.dim() != b.dim() {
        return Err(EmbeddingError::DimensionMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    Ok(dot(a.values(), b.values()).clamp(-1.0, 1.0))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// Lowercased alphanumeric tokens of `text`.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(String::from)
        .collect()
}

fn seeded_hash(seed: u64, parts: &[&[u8]]) -> u64 {
    let mut h = FNV_OFFSET;
    for b in seed.to_le_bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    for (i, part) in parts.iter().enumerate() {
        if i > 0 {
            h ^= u64::from(PAIR_SEPARATOR);
            h = h.wrapping_mul(FNV_PRIME);
        }
        for &b in *part {
            h ^= u64::from(b);
            h = h.wrapping_mul(FNV_PRIME);
        }
    }
    // splitmix64 finalizer
    h ^= h >> 30;
    h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h ^= h >> 27;
    h = h.wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

fn accumulate(acc: &mut [f64], parts: &[&[u8]]) {
    let dim = acc.len() as u64;
    let bucket = (seeded_hash(BUCKET_SEED, parts) % dim) as usize;
    let sign = if seeded_hash(SIGN_SEED, parts) & 1 == 0 {
        1.0
    } else {
        -1.0
    };
    acc[bucket] += sign;
}

/// Embeds `text` with the local hashing scheme.
pub fn hash_embed(text: &str, dim: usize) -> Result<EmbeddingVector, EmbeddingError> {
    if dim == 0 {
        return Err(EmbeddingError::ZeroDimension);
    }
    let trimmed = text.trim();
    if trimmed.is_empty() {
        return Err(EmbeddingError::EmptyText);
    }
    let mut tokens = tokenize(trimmed);
    if tokens.is_empty() {
        tokens.push(trimmed.to_lowercase());
    }

    let mut acc = vec![0.0f64; dim];
    for token in &tokens {
        accumulate(&mut acc, &[token.as_bytes()]);
    }
    for pair in tokens.windows(2) {
        accumulate(&mut acc, &[pair[0].as_bytes(), pair[1].as_bytes()]);
    }
    if acc.iter().all(|v| *v == 0.0) {
        // every feature cancelled out
        let whole = trimmed.to_lowercase();
        accumulate(&mut acc, &[whole.as_bytes()]);
    }
    EmbeddingVector::normalize(acc)
}
