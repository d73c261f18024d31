//! Deterministic seed derivation.
//!
//! Every source of randomness in a run draws from its own ChaCha stream keyed
//! by (master seed, stream tag, index). This keeps independent subsystems
//! (fleet sampling, daily realizations, exploration, forest training, PV
//! noise) decoupled: consuming more randomness in one never perturbs another,
//! and identical configs reproduce bit-identical runs.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Stream tags. Values are arbitrary but fixed forever.
pub mod stream {
    pub const FLEET: u64 = 1;
    pub const DAY: u64 = 2;
    pub const EXPLORE: u64 = 3;
    pub const FOREST: u64 = 4;
    pub const DAY_TYPE: u64 = 5;
    pub const PV_NOISE: u64 = 6;
    pub const EVAL: u64 = 7;
}

/// splitmix64 finalizer; good avalanche for cheap key mixing.
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from a master seed, a stream tag and an index.
pub fn derive(master: u64, tag: u64, index: u64) -> u64 {
    splitmix(splitmix(master ^ tag.wrapping_mul(0xa076_1d64_78bd_642f)) ^ index)
}

/// ChaCha generator for the given (master, tag, index) stream.
pub fn rng(master: u64, tag: u64, index: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(derive(master, tag, index))
}
