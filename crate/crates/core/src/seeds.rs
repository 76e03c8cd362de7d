//! Fixed offsets that derive per-component RNG streams from one user seed.
//!
//! Dataset generation, network initialisation, batch sampling and evaluation
//! each draw from their own stream so changing one never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const DATASET: u64 = 0x0000_0000;
pub const VALUE_INIT: u64 = 0x1000_0001;
pub const POLICY_INIT: u64 = 0x2000_0002;
pub const BATCH: u64 = 0x3000_0003;
pub const EVAL: u64 = 0x4000_0004;
pub const PROBE: u64 = 0x5000_0005;
pub const NOISE: u64 = 0x6000_0006;

pub fn rng(seed: u64, offset: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_add(offset))
}
