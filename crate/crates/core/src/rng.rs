//! Seeded randomness.
//!
//! Every stochastic step draws from a Xoshiro256++ generator whose seed is
//! derived from a master seed and a stream index, so results never depend on
//! iteration order or thread count.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

pub type Rng = Xoshiro256PlusPlus;

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hashes `(master, index)` into an independent 64-bit stream seed.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    mix64(mix64(master.wrapping_add(GOLDEN_GAMMA)) ^ index.wrapping_mul(GOLDEN_GAMMA))
}

pub fn rng_from_seed(seed: u64) -> Rng {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

pub fn stream(master: u64, index: u64) -> Rng {
    rng_from_seed(derive_seed(master, index))
}

/// Named sub-streams so unrelated consumers of one run seed never overlap.
pub mod purpose {
    pub const INIT: u64 = 0x494e_4954;
    pub const SHUFFLE: u64 = 0x5348_5546;
    pub const SPLIT: u64 = 0x5350_4c54;
    pub const HEAD: u64 = 0x4845_4144;
}
