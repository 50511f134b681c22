//! Seed derivation.
//!
//! Every random stream in the crate is a ChaCha8 generator (`rand_chacha`),
//! seeded with a 64-bit value derived from the user seed plus a stream tag and
//! an index via SplitMix64 finalization. ChaCha8 output is specified
//! independently of platform, so the streams are reproducible everywhere.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent random streams used by the library.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Generate = 1,
    Init = 2,
    Shuffle = 3,
    Mutation = 4,
    RandomBaseline = 5,
    Probe = 6,
    ViewNoise = 7,
    Control = 8,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, stream: Stream, index: u64) -> u64 {
    splitmix64(splitmix64(seed ^ ((stream as u64) << 56)) ^ index)
}

pub fn stream_rng(seed: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, stream, index))
}
