//! Deterministic hashed text embedder.
//!
//! Stand-in for a sentence-embedding model: tokens are hashed into `D`
//! buckets with weight 1, adjacent-token bigrams with weight 0.5, and the
//! result is L2-normalized. It is dependency-free and preserves the one
//! property the pipeline relies on: texts sharing more content score a
//! higher cosine. A remote embedder can be swapped in behind [`Embedder`].

use serde::{Deserialize, Serialize};

use crate::num::{dot, norm, Real};
use crate::rng::fnv1a64;
use crate::textproc::{ngrams, tokenize};
use crate::Scalar;

pub const DEFAULT_DIM: usize = 256;
const BIGRAM_WEIGHT: f64 = 0.5;

/// A unit-norm (or all-zero) embedding vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding<R> {
    pub values: Vec<R>,
}

impl<R: Real> Embedding<R> {
    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == R::zero())
    }
}

/// Bucket index of a token or joined n-gram.
pub fn bucket(term: &str, dim: usize) -> usize {
    (fnv1a64(term.as_bytes()) % dim as u64) as usize
}

/// Hash a text into a unit-norm embedding of dimension `dim`.
///
/// Empty token set yields the zero vector.
pub fn hashed_embedding<R: Real>(text: &str, dim: usize) -> Embedding<R> {
    let tokens = tokenize(text);
    let mut values = vec![R::zero(); dim];
    for t in &tokens {
        values[bucket(t, dim)] += R::one();
    }
    for bg in ngrams(&tokens, 2) {
        values[bucket(&bg, dim)] += R::from_f64_c(BIGRAM_WEIGHT);
    }
    let n = norm(&values);
    if n > R::zero() {
        for v in &mut values {
            *v /= n;
        }
    }
    Embedding { values }
}

/// Cosine similarity in [-1, 1]. Zero if either vector is all-zero.
///
/// Bitwise-identical non-zero vectors score exactly 1.
pub fn cosine<R: Real>(a: &Embedding<R>, b: &Embedding<R>) -> R {
    if a.is_zero() || b.is_zero() {
        return R::zero();
    }
    if a.values == b.values {
        return R::one();
    }
    let denom = norm(&a.values) * norm(&b.values);
    let c = dot(&a.values, &b.values) / denom;
    c.min(R::one()).max(-R::one())
}

/// Text embedder interface; the hashed implementation is the offline default,
/// an HTTP-backed one lives in [`crate::llm`].
pub trait Embedder {
    fn embed(&self, text: &str) -> Embedding<Scalar>;

    /// Cosine similarity of two texts under this embedder.
    fn text_cosine(&self, a: &str, b: &str) -> Scalar {
        cosine(&self.embed(a), &self.embed(b))
    }
}

/// The default deterministic embedder.
#[derive(Debug, Clone, Copy)]
pub struct HashedEmbedder {
    pub dim: usize,
}

impl Default for HashedEmbedder {
    fn default() -> Self {
        Self { dim: DEFAULT_DIM }
    }
}

impl Embedder for HashedEmbedder {
    fn embed(&self, text: &str) -> Embedding<Scalar> {
        hashed_embedding(text, self.dim)
    }
}
