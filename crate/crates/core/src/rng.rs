//! Seed derivation.
//!
//! Every random draw in the crate comes from a ChaCha8 stream keyed by a seed
//! derived here, so any episode can be regenerated from `(master, stream, index)`
//! alone, whatever order episodes are executed in.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags keep the layout, start and policy draws of one episode independent.
pub mod stream {
    pub const LAYOUT: u64 = 0x4c41_594f;
    pub const START: u64 = 0x5354_4152;
    pub const POLICY: u64 = 0x504f_4c49;
    pub const TRAIN: u64 = 0x5452_4149;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ stream) ^ index)
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
