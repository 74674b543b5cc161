//! Desk-scale embodied captioning laboratory.
//!
//! Three phases over synthetic scenes: explore and collect noisy per-object
//! captions, distill one consensus pseudo-caption per clustered object
//! instance, and fine-tune a small captioner with a combined captioning +
//! triplet objective. Every algorithmic component is covered by an
//! independent brute-force oracle in the test suites.

pub mod consensus;
pub mod embedding;
pub mod error;
pub mod explore;
pub mod llm;
pub mod metrics;
pub mod num;
pub mod perceive;
pub mod pipeline;
pub mod rng;
pub mod scene;
pub mod textproc;
pub mod trainer;
pub mod voxmap;

pub use error::{Error, Result};

/// Concrete scalar used by the pipeline; the numeric kernels are generic
/// over [`num::Real`] and work with `f32` as well.
pub type Scalar = f64;

/// Pipeline embedding at the concrete scalar type.
pub type Embedding = embedding::Embedding<Scalar>;
