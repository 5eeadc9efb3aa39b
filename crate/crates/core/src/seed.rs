//! Seed derivation and RNG construction.
//!
//! Every random stage (data generation, splits, bootstraps, projection
//! matrices) draws from its own ChaCha stream whose seed is derived from a
//! base seed and a small tuple of integers, so replications never share state.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub type Rng = ChaCha20Rng;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes `base` with each element of `parts` in order.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(base), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

/// Stage tags keep streams for different purposes apart.
pub mod stage {
    pub const DATA: u64 = 1;
    pub const SPLIT: u64 = 2;
    pub const PARTITION: u64 = 3;
    pub const MACHINES: u64 = 4;
    pub const PROJECTION: u64 = 5;
    pub const TUNING: u64 = 6;
}

pub fn rng(seed: u64) -> Rng {
    ChaCha20Rng::seed_from_u64(seed)
}
