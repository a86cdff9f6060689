//! Counter-based seed derivation: every stochastic component draws from
//! `rng_for(master, stream, index)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const STREAM_INITIAL_STATE: u64 = 1;
pub const STREAM_ADJACENCY: u64 = 2;
pub const STREAM_SAMPLING: u64 = 3;
pub const STREAM_MASK: u64 = 4;
pub const STREAM_PARAM_INIT: u64 = 5;
pub const STREAM_SHUFFLE: u64 = 6;
pub const STREAM_SCENARIO: u64 = 7;
pub const STREAM_SWEEP: u64 = 8;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ stream) ^ index)
}

pub fn rng_for(master: u64, stream: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, stream, index))
}
