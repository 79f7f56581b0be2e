//! Deterministic random streams.
//!
//! All randomness in training and data generation is derived from a base seed
//! plus a small tuple of indices (example id, step, purpose). A stream never
//! depends on how many values other streams consumed, so results are
//! independent of evaluation order and of whether work runs in parallel, and
//! resuming from a checkpoint only needs the base seed and the step counter.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Stream purposes, kept distinct so that e.g. the dropout stream of an
/// example never aliases its interleaving stream.
pub mod purpose {
    pub const INTERLEAVE_SRC: u64 = 1;
    pub const INTERLEAVE_TGT: u64 = 2;
    pub const DROPOUT: u64 = 3;
    pub const BATCH: u64 = 4;
    pub const CORPUS: u64 = 5;
    pub const FEATURES: u64 = 6;
    pub const SPLIT: u64 = 7;
    pub const ANALYSIS: u64 = 8;
    pub const KMEANS: u64 = 9;
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a seed and a list of indices into one 64-bit stream key.
pub fn stream_key(seed: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(mix64(seed), |acc, &p| mix64(acc ^ mix64(p.wrapping_add(0x5851_F42D))))
}

pub fn stream(seed: u64, parts: &[u64]) -> StreamRng {
    ChaCha8Rng::seed_from_u64(stream_key(seed, parts))
}

/// Standard normal sample (Box–Muller).
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    // 1 - u keeps the argument of ln in (0, 1].
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen::<f64>();
    libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(core::f64::consts::TAU * u2)
}
