//! Seed derivation. Every random stream in the crate is a ChaCha8 generator
//! keyed by a master seed mixed with a purpose tag, so that independent parts
//! of a run (market draws, policy sampling, net init, batch sampling) never
//! share a stream and whole runs replay bit-exactly from one seed.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags. Values are arbitrary but fixed; changing them changes every
/// seeded artifact in the repo.
pub mod stream {
    pub const POPULATION: u64 = 0xB1D_0001;
    pub const EPISODE_ENV: u64 = 0xB1D_0002;
    pub const EPISODE_POLICY: u64 = 0xB1D_0003;
    pub const NET_INIT: u64 = 0xB1D_0004;
    pub const TRAIN: u64 = 0xB1D_0005;
    pub const ACTION_SAMPLES: u64 = 0xB1D_0006;
    pub const CONSTANTS: u64 = 0xB1D_0007;
    pub const COLLECT: u64 = 0xB1D_0008;
    pub const EVAL: u64 = 0xB1D_0009;
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a master seed with one or more tags into a derived seed.
pub fn derive(seed: u64, tags: &[u64]) -> u64 {
    let mut acc = splitmix(seed);
    for &t in tags {
        acc = splitmix(acc ^ splitmix(t));
    }
    acc
}

/// A ChaCha8 generator for `(seed, tags...)`.
pub fn chacha(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, tags))
}
