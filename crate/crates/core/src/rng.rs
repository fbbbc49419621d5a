//! Deterministic random streams.
//!
//! Every stream is a ChaCha8 generator keyed by a base seed and a path of
//! integers (step index, query index, ...). Streams with different paths are
//! independent, so rollout workers can run in any order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Stream for `seed` refined by `path`.
pub fn stream(seed: u64, path: &[u64]) -> Stream {
    let key = path
        .iter()
        .fold(splitmix64(seed), |acc, &p| splitmix64(acc ^ splitmix64(p.wrapping_add(1))));
    ChaCha8Rng::seed_from_u64(key)
}
