//! Deterministic seed derivation.
//!
//! Every source of randomness in the crate is a ChaCha stream keyed by a
//! splitmix64 mix of (base seed, stream tag, index). The mix is written out
//! here instead of relying on `std` hashers so that seeds stay stable across
//! toolchain upgrades.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags for the independent RNG streams used across the crate.
pub mod stream {
    pub const KMEANS: u64 = 0x01;
    pub const INIT_PARAMS: u64 = 0x02;
    pub const SHUFFLE: u64 = 0x03;
    pub const GROW: u64 = 0x04;
    pub const SPLIT: u64 = 0x05;
    pub const SYNTH: u64 = 0x06;
}

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a base seed with a stream tag and an in-stream index.
pub fn mix(seed: u64, tag: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed ^ splitmix64(tag)).wrapping_add(splitmix64(index)))
}

/// ChaCha stream for `(seed, tag, index)`.
pub fn stream_rng(seed: u64, tag: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(seed, tag, index))
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Run seed for one experiment point: `mix(base, fnv1a(config_id), repeat)`.
pub fn derive_run_seed(base_seed: u64, config_id: &str, repeat: usize) -> u64 {
    mix(base_seed, fnv1a64(config_id.as_bytes()), repeat as u64)
}
