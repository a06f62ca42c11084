//! Seed derivation for independent, order-free random streams.
//!
//! Every stochastic step (partitioning, per-client noise, per-client shuffling in a
//! given round) draws from its own ChaCha stream keyed by the master seed and a
//! small tuple of identifiers, so the order in which clients run never changes
//! what they draw.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags. Kept distinct so two purposes never share a stream.
pub mod stream {
    pub const INIT: u64 = 1;
    pub const PARTITION: u64 = 2;
    pub const NOISE_RATES: u64 = 3;
    pub const FLIPS: u64 = 4;
    pub const LOCAL_TRAIN: u64 = 5;
    pub const SUBSET: u64 = 6;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `master` with each of `parts` into a fresh 64-bit seed.
pub fn derive(master: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(master), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derived_rng(master: u64, parts: &[u64]) -> ChaCha8Rng {
    rng(derive(master, parts))
}
