//! Deterministic random streams.
//!
//! Every consumer derives an independent ChaCha8 stream from a `(seed, stream id)`
//! pair, so work can be split across threads without changing results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Stream id for slot `slot` of generation `iteration`.
pub fn slot_stream(seed: u64, iteration: usize, slot: usize) -> ChaCha8Rng {
    stream(seed, ((iteration as u64) << 32) | slot as u64)
}

/// SplitMix64 finalizer, used to fold several integers into one stream id.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
