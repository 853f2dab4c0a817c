//! Seeded random number streams.
//!
//! Every stochastic component takes explicit seeds; independent streams are
//! derived with `splitmix64` so that sweep tasks and bootstrap replicates can
//! run in parallel without sharing state and still reproduce bit-identically.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// One round of splitmix64, used as a seed mixer.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from a parent seed and a salt.
pub fn mix_seed(seed: u64, salt: u64) -> u64 {
    splitmix64(seed ^ splitmix64(salt))
}

/// Deterministic generator for a (seed, stream) pair.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
