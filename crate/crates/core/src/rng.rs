//! Seed derivation.
//!
//! Every stochastic component receives its own `u64` seed derived from a
//! single root seed through [`derive_seed`], so a full pipeline run is
//! replayable from one number. Streams are identified by a small integer tag
//! (see the `stream` constants) optionally combined with an index.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub mod stream {
    pub const PHANTOM: u64 = 1;
    pub const INIT: u64 = 2;
    pub const SAMPLING: u64 = 3;
    pub const AUGMENT: u64 = 4;
    pub const DROPOUT: u64 = 5;
    pub const RANSAC: u64 = 6;
    pub const AXIS: u64 = 7;
    pub const ORDER: u64 = 8;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Child seed for `(stream, index)` under `root`.
pub fn derive_seed(root: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(root) ^ stream.wrapping_mul(0xd6e8_feb8_6659_fd93)) ^ index)
}

pub fn rng_from(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn child_rng(root: u64, stream: u64, index: u64) -> Rng {
    rng_from(derive_seed(root, stream, index))
}
