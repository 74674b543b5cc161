//! Seeded RNG streams.
//!
//! Every stochastic component takes an explicit RNG handle so runs are
//! reproducible bit-for-bit. Independent subsystems (noise model, policy,
//! triplet sampling) derive their own streams from the run seed and a label,
//! so adding draws to one subsystem never perturbs another.

use rand_pcg::Pcg64Mcg;

pub use rand::Rng;
pub use rand::SeedableRng;

/// The RNG used throughout the crate.
pub type Stream = Pcg64Mcg;

/// FNV-1a 64-bit hash. Stable across platforms and releases; used for RNG
/// stream derivation and for the hashed text embedder.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(PRIME);
    }
    h
}

/// Derive an independent stream from a base seed and a purpose label.
pub fn stream(seed: u64, label: &str) -> Stream {
    Pcg64Mcg::seed_from_u64(seed ^ fnv1a64(label.as_bytes()))
}

/// Deterministic hash of an id into [0, 1).
pub fn hash_unit(id: u64) -> f64 {
    let h = fnv1a64(&id.to_le_bytes());
    (h >> 11) as f64 / (1u64 << 53) as f64
}
