//! Deterministic substream RNGs.
//!
//! Every randomized routine takes a base seed and derives independent
//! substreams from it, so replicates and chains are order-independent and
//! can run in parallel without sharing state.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags keep substreams from distinct pipeline stages disjoint even
/// when they share a base seed and an index.
#[derive(Debug, Clone, Copy)]
pub enum StreamTag {
    SampleDraw = 1,
    Bootstrap = 2,
    Chain = 3,
    McValidate = 4,
    SimReplicate = 5,
    Synthetic = 6,
}

/// Counter-based RNG for substream `index` under `tag`.
pub fn substream(seed: u64, tag: StreamTag, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    debug_assert!(index < (1 << 56));
    rng.set_stream(((tag as u64) << 56) ^ index);
    rng
}

/// Derive a child seed (splitmix64 step) so nested stages get disjoint
/// base seeds.
pub fn mix(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}
