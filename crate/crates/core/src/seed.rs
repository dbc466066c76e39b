//! Deterministic seed derivation.
//!
//! Every random decision is drawn from a ChaCha stream whose seed is derived
//! from a root seed, a stream label and an index, so each trial, each
//! generated formula and each sampling pass can be reproduced on its own.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Named sub-streams of a root seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stream {
    Generation,
    Decimation,
    Permutation,
    Sampling,
    Trial,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::Generation => 0x6765_6e65_7261_7465,
            Stream::Decimation => 0x6465_6369_6d61_7465,
            Stream::Permutation => 0x7065_726d_7574_6520,
            Stream::Sampling => 0x7361_6d70_6c69_6e67,
            Stream::Trial => 0x7472_6961_6c00_0000,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed; distinct `(stream, index)` pairs give unrelated seeds.
pub fn derive_seed(root: u64, stream: Stream, index: u64) -> u64 {
    let a = splitmix64(root ^ stream.tag());
    splitmix64(a ^ splitmix64(index.wrapping_add(0x5851_f42d_4c95_7f2d)))
}

pub fn rng_for(root: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, stream, index))
}
