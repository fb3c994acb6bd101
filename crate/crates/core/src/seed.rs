//! Counter-based seed splitting.
//!
//! Every random stream in the crate is keyed by `(master seed, path of
//! counters)`. Streams with different paths never share state, so adding
//! draws to one stream leaves every other stream untouched.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from `seed` and a path of stream counters.
pub fn split(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(seed), |acc, &c| {
        splitmix64(acc ^ splitmix64(c.wrapping_add(0x632B_E59B_D9B4_E019)))
    })
}

/// A ChaCha8 generator for the stream at `path` under `seed`.
pub fn stream(seed: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(split(seed, path))
}
