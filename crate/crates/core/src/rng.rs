//! Seeded random streams.
//!
//! Every stochastic step (a Monte Carlo trial, a user's initialization, a
//! dropout mask for round `t`) draws from its own stream keyed by the global
//! seed and a short label path, so results never depend on scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

pub mod label {
    pub const TRIAL: u64 = 1;
    pub const PRECODER_INIT: u64 = 2;
    pub const COMBINER_INIT: u64 = 3;
    pub const DATASET: u64 = 4;
    pub const CORRUPTION: u64 = 5;
    pub const PATTERN: u64 = 6;
    pub const SPLIT: u64 = 7;
    pub const MASK: u64 = 8;
    pub const BATCH: u64 = 9;
    pub const PARAM_INIT: u64 = 10;
    pub const VALIDATION: u64 = 11;
    pub const SHUFFLE: u64 = 12;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a 64-bit key from a seed and a label path.
pub fn derive(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(seed), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn stream(seed: u64, path: &[u64]) -> Stream {
    ChaCha8Rng::seed_from_u64(derive(seed, path))
}
