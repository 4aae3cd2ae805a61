//! Counter-based random streams.
//!
//! Every random draw in the engine comes from a generator keyed by a tuple of
//! integers (seed, stream tag, and up to three counters). A stream depends only
//! on its key, never on the order in which work is scheduled, so results are
//! identical for any worker count.

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

/// Stream tags separating independent uses of the same seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    RayJitter = 1,
    GlobalBatch = 2,
    ErrorRegions = 3,
    Patch = 4,
    References = 5,
    Corruption = 6,
    Consistency = 7,
    Distill = 8,
    GradCheck = 9,
    Fixture = 10,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a key into a single 64-bit seed.
pub fn mix_key(seed: u64, stream: Stream, a: u64, b: u64, c: u64) -> u64 {
    let mut h = splitmix64(seed);
    for word in [stream as u64, a, b, c] {
        h = splitmix64(h ^ word);
    }
    h
}

/// A generator for the stream identified by `(seed, stream, a, b, c)`.
pub fn keyed_rng(seed: u64, stream: Stream, a: u64, b: u64, c: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_key(seed, stream, a, b, c))
}
