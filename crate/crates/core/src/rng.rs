//! Seed derivation. A run seed fans out into independent streams:
//!
//! * `derive_seed(seed, INIT_STREAM)` initialises parameters,
//! * `derive_seed(seed, DATA_STREAM)` drives label splits and batch sampling,
//! * `derive_seed(seed, AUGMENT_STREAM)` drives strong augmentation.
//!
//! Per-epoch and per-step streams are derived again from these, so any
//! position in training can be reproduced without replaying earlier draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const INIT_STREAM: u64 = 0x494e_4954;
pub const DATA_STREAM: u64 = 0x4441_5441;
pub const AUGMENT_STREAM: u64 = 0x4155_474d;

/// SplitMix64 finaliser applied to `seed` combined with `stream`.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed
        .wrapping_add(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(stream.wrapping_mul(0xbf58_476d_1ce4_e5b9))
        .rotate_left(17)
        ^ stream;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn stream_rng(seed: u64, path: &[u64]) -> ChaCha8Rng {
    let s = path.iter().fold(seed, |acc, &p| derive_seed(acc, p));
    ChaCha8Rng::seed_from_u64(s)
}
