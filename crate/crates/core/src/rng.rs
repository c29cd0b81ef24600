//! Seeded randomness.
//!
//! Every stochastic step in the crate draws from xoshiro256** seeded through
//! SplitMix64 (`SeedableRng::seed_from_u64`), so a `(seed, stream)` pair pins
//! the exact sequence of draws.

use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use rand_xoshiro::Xoshiro256StarStar;

pub type Rng = Xoshiro256StarStar;

/// Independent stream for a given purpose derived from one user seed.
pub fn stream(seed: u64, purpose: u64) -> Rng {
    let mixed = seed ^ purpose.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    Rng::seed_from_u64(mixed)
}

pub mod purpose {
    pub const INIT: u64 = 1;
    pub const SPLIT: u64 = 2;
    pub const FEW_SHOT: u64 = 3;
    pub const SHUFFLE: u64 = 4;
    pub const SYNTHETIC: u64 = 5;
    pub const GRADCHECK: u64 = 6;
}

/// Fills a vector with N(0, std) draws rounded through `f32`, so the values
/// survive the float32 checkpoint encoding bit-exactly.
pub fn normal_f32_exact(rng: &mut Rng, len: usize, std: f64) -> Vec<f64> {
    let normal = Normal::new(0.0f64, std).expect("std must be finite and non-negative");
    (0..len)
        .map(|_| normal.sample(rng) as f32 as f64)
        .collect()
}
