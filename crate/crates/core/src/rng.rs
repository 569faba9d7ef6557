//! Deterministic seed derivation. Every stochastic component takes a u64
//! seed and derives sub-seeds by mixing, so runs are reproducible and
//! independent streams never alias.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; good avalanche, stable across platforms.
pub fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stream for a named purpose under a base seed.
pub fn rng_for(seed: u64, label: &str) -> ChaCha8Rng {
    let mut h = 0xcbf29ce484222325u64; // FNV-1a
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    rng_from(mix(seed, h))
}
