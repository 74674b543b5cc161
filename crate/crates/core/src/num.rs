//! Generic scalar abstraction for the numeric kernels.
//!
//! Embeddings, caption metrics, and the trainer are written against [`Real`]
//! so they work with `f32` or `f64`; the pipeline itself runs on the
//! [`crate::Scalar`] alias.

use std::fmt;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign};

/// Floating point scalar: f32 or f64.
pub trait Real:
    Float + FromPrimitive + NumAssign + Sum + fmt::Debug + fmt::Display + Default + Send + Sync + 'static
{
    /// Lossless-enough conversion from usize counts.
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable")
    }

    /// Conversion from an f64 constant.
    fn from_f64_c(v: f64) -> Self {
        Self::from_f64(v).expect("constant representable")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Dot product of two equal-length slices.
pub fn dot<R: Real>(a: &[R], b: &[R]) -> R {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// Euclidean norm.
pub fn norm<R: Real>(a: &[R]) -> R {
    dot(a, a).sqrt()
}

/// Euclidean distance between two equal-length vectors.
pub fn euclidean<R: Real>(a: &[R], b: &[R]) -> R {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum::<R>()
        .sqrt()
}

/// Index of the largest element; ties break toward the lowest index.
pub fn argmax<R: Real>(values: &[R]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Quartile summary of a sample (min, q1, median, q3, max).
///
/// Linear interpolation between order statistics; empty input yields `None`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Quartiles {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

pub fn quartiles(samples: &[f64]) -> Option<Quartiles> {
    if samples.is_empty() {
        return None;
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite samples"));
    let at = |q: f64| -> f64 {
        let pos = q * (sorted.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        let frac = pos - lo as f64;
        sorted[lo] * (1.0 - frac) + sorted[hi] * frac
    };
    Some(Quartiles {
        min: sorted[0],
        q1: at(0.25),
        median: at(0.5),
        q3: at(0.75),
        max: sorted[sorted.len() - 1],
    })
}
