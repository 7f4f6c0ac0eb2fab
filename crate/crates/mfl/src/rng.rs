//! Seed handling. Every stochastic routine takes an explicit `u64` seed and
//! builds a ChaCha8 stream from it; independent purposes use distinct streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const STREAM_MODEL: u64 = 0;
pub const STREAM_INIT: u64 = 1;
pub const STREAM_BINDER: u64 = 2;
pub const STREAM_SE: u64 = 3;
pub const STREAM_QUAD: u64 = 4;
pub const STREAM_MISC: u64 = 5;

pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for one replicate of a sweep: base seed xor a hash of the grid indices.
pub fn replicate_seed(base: u64, indices: &[u64]) -> u64 {
    let mut h = 0x6a09_e667_f3bc_c908u64;
    for &i in indices {
        h = mix64(h ^ i);
    }
    base ^ h
}
