//! Seed derivation so that every stage draws from its own reproducible stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a base seed with a stream tag and an index.
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    splitmix(splitmix(base ^ splitmix(stream)) ^ index)
}

pub fn rng_from(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub mod streams {
    pub const GENERATOR: u64 = 1;
    pub const SWAV: u64 = 2;
    pub const TEST_SET: u64 = 3;
    pub const ONE_SHOT: u64 = 4;
    pub const SEGMENTER: u64 = 5;
    pub const KMEANS: u64 = 6;
    pub const INFER: u64 = 7;
    pub const DONOR: u64 = 8;
    pub const GEN: u64 = 9;
}
