//! Seed derivation. A single root seed deterministically fans out into
//! independent streams, one per named purpose, so whole-pipeline runs are
//! reproducible from one integer.
//!
//! Derivation: the purpose string is FNV-1a hashed, mixed with the root seed
//! and index through two rounds of splitmix64, and the result seeds a
//! ChaCha8 stream.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x100000001b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Derive a child seed from `(root, purpose, index)`.
pub fn derive_seed(root: u64, purpose: &str, index: u64) -> u64 {
    splitmix64(splitmix64(root ^ fnv1a(purpose.as_bytes())).wrapping_add(index))
}

/// Derive an independent RNG stream from `(root, purpose, index)`.
pub fn stream(root: u64, purpose: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, purpose, index))
}
