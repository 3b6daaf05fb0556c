//! Seeding policy. All randomness in the crate flows through ChaCha8, a
//! seedable, platform-independent stream cipher generator, so traces
//! reproduce bit-identically across machines. Sub-streams (initial state,
//! switching signal, Monte-Carlo members) get seeds derived from the master
//! seed by splitmix64 steps.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn chacha(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Deterministic child seed for sub-stream `stream` of `base`.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    splitmix64(base.wrapping_add(splitmix64(stream)))
}
