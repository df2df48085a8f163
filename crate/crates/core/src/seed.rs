//! Seed hierarchy.
//!
//! Every random stream in a run is derived from the master seed by folding a
//! path of integer tags through the SplitMix64 finalizer. The derivation is
//! pure integer arithmetic, so the same path yields the same stream on every
//! platform.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from `parent` and a path of tags.
pub fn derive(parent: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(parent), |acc, &tag| splitmix64(acc ^ splitmix64(tag)))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Well-known first-level tags.
pub mod tag {
    pub const BACKBONE_INIT: u64 = 1;
    pub const EMBEDDING: u64 = 2;
    pub const PUBLIC_TASK: u64 = 3;
    pub const SCENARIO: u64 = 4;
    pub const CLIENT_TRAIN: u64 = 5;
    pub const PRETRAIN: u64 = 6;
    pub const PROBES: u64 = 7;
    pub const SWEEP: u64 = 8;
    pub const BLOCK_INFLUENCE: u64 = 9;
}
