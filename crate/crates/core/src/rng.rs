//! Seed derivation. Every random draw in the crate comes from a ChaCha stream
//! keyed by a 64-bit seed; child seeds are derived from a parent seed and a
//! counter so that parallel work units never share a stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags used when splitting a seed.
pub mod stream {
    pub const DESIGN: u64 = 1;
    pub const NOISE: u64 = 2;
    pub const BOOTSTRAP: u64 = 3;
    pub const REPETITION: u64 = 4;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Child seed for `(tag, index)` under `parent`.
pub fn derive_seed(parent: u64, tag: u64, index: u64) -> u64 {
    splitmix64(splitmix64(parent ^ splitmix64(tag)).wrapping_add(index))
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
