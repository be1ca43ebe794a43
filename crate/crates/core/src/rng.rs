//! Seed derivation. Every consumer of randomness gets its own ChaCha stream keyed
//! by the run seed plus a purpose path, so stages never shift each other's draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StageRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(seed), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn derive_rng(seed: u64, path: &[u64]) -> StageRng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, path))
}

/// Stream tags used by the pipeline.
pub mod stream {
    pub const INIT: u64 = 1;
    pub const TRAIN: u64 = 2;
    pub const REPLAY: u64 = 3;
    pub const EXPAND_NET: u64 = 4;
    pub const EXPAND_TRAIN: u64 = 5;
    pub const NEW_ELEMENTS: u64 = 6;
    pub const CANDIDATES: u64 = 7;
}
