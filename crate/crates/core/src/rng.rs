//! Seeded random streams.
//!
//! A run seed fans out into independent ChaCha streams, one per consumer, so
//! that e.g. action sampling never perturbs the attachment/noise realization
//! that all methods share.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// Stream ids for the consumers of a run seed.
pub mod streams {
    pub const INITIAL: u64 = 0;
    pub const ENVIRONMENT: u64 = 1;
    pub const ACTIONS: u64 = 2;
    pub const INIT_PARAMS: u64 = 3;
}

pub fn stream(seed: u64, id: u64) -> Stream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Mixes a base seed with an index (splitmix64 finalizer).
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
