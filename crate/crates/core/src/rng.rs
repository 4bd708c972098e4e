//! Seeded randomness. Every random choice in the crate goes through
//! [`SplitRng`] so results are reproducible across platforms.

use rand::SeedableRng;
use rand_xoshiro::SplitMix64;

pub type SplitRng = SplitMix64;

pub fn seeded(seed: u64) -> SplitRng {
    SplitMix64::seed_from_u64(seed)
}

/// Seed of an independent stream for a sub-task (split index, epoch, ...).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    // one splitmix round over the pair keeps nearby streams decorrelated
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive(seed: u64, stream: u64) -> SplitRng {
    seeded(derive_seed(seed, stream))
}
