//! Deterministic derivation of per-purpose RNG streams from one master seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const INIT: u64 = 1;
pub const SAMPLE: u64 = 2;
pub const NOISE: u64 = 3;
pub const SUBSET: u64 = 4;
pub const VAL: u64 = 5;
pub const SPLIT: u64 = 6;
pub const EVAL: u64 = 7;
pub const SYNTH: u64 = 8;
pub const NEG: u64 = 9;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent stream seed for (master seed, purpose tag, index).
pub fn derive(base: u64, tag: u64, index: u64) -> u64 {
    splitmix64(base ^ splitmix64(tag.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rng_for(base: u64, tag: u64, index: u64) -> ChaCha8Rng {
    rng(derive(base, tag, index))
}
