//! Seeding helpers.
//!
//! A single master seed fans out to independent component streams through
//! splitmix64, so adding a consumer never perturbs the streams of the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator used everywhere in the engine.
pub type Rng = ChaCha8Rng;

/// One splitmix64 output step.
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the seed of component stream `stream` from `master`.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    splitmix64(master ^ splitmix64(stream.wrapping_add(1)))
}

/// Named component streams.
pub mod stream {
    pub const DATA: u64 = 1;
    pub const ENV: u64 = 2;
    pub const POLICY_INIT: u64 = 3;
    pub const MODEL_INIT: u64 = 4;
    pub const MODEL_TRAIN: u64 = 5;
    pub const ACTIONS: u64 = 6;
    pub const ROLLOUTS: u64 = 7;
    pub const UPDATES: u64 = 8;
    pub const PLANNER: u64 = 9;
    pub const EVAL: u64 = 10;
}

pub fn rng_from(master: u64, stream: u64) -> Rng {
    Rng::seed_from_u64(derive_seed(master, stream))
}
