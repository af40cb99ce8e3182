//! Seed derivation so that per-item random streams are independent of
//! processing order and worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for item `index` of stream `stream` under the run seed `seed`.
pub fn derive(seed: u64, stream: u64, index: u64) -> u64 {
    mix(mix(seed ^ mix(stream)) ^ index)
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derived_rng(seed: u64, stream: u64, index: u64) -> Rng {
    rng(derive(seed, stream, index))
}

/// Stream identifiers.
pub mod stream {
    pub const DECOMPOSE: u64 = 1;
    pub const MINE_CANDIDATES: u64 = 2;
    pub const MINE_DRAWS: u64 = 3;
    pub const BATCH_ORDER: u64 = 4;
    pub const INIT: u64 = 5;
    pub const SYNTH: u64 = 6;
    pub const GRADCHECK: u64 = 7;
    pub const SYNTH_EVAL: u64 = 8;
    pub const EPOCH_MINING: u64 = 9;
}
