//! Keyed deterministic RNG streams.
//!
//! Every random draw in the crate comes from a `ChaCha8Rng` derived from a
//! global seed plus a sequence of integer tags (sample id, round, phase, ...).
//! Streams with distinct keys are independent; the same key always reproduces
//! the same stream regardless of thread count or evaluation order.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a reproducible RNG from a seed and a key path.
pub fn keyed_rng(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    let mut state = splitmix64(seed);
    for &t in tags {
        state = splitmix64(state ^ t);
    }
    ChaCha8Rng::seed_from_u64(state)
}
