//! Deterministic seed derivation.
//!
//! Every random decision in the crate draws from its own stream derived
//! from the run seed, a purpose tag, and a salt. Streams for different
//! purposes never interleave, so adding a consumer (a strategy hook, an
//! extra epoch) cannot shift the draws of another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a mix of a base seed, a purpose tag, and a salt.
pub fn mix(base: u64, tag: &str, salt: u64) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut hash = OFFSET;
    for byte in base
        .to_le_bytes()
        .iter()
        .chain(tag.as_bytes())
        .chain(salt.to_le_bytes().iter())
    {
        hash ^= u64::from(*byte);
        hash = hash.wrapping_mul(PRIME);
    }
    hash
}

/// Seeded generator for one purpose stream.
pub fn stream(base: u64, tag: &str, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(base, tag, salt))
}

/// FNV-1a hash of a byte stream, used for dataset fingerprints.
pub fn fnv1a(bytes: impl IntoIterator<Item = u8>) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut hash = OFFSET;
    for byte in bytes {
        hash ^= u64::from(byte);
        hash = hash.wrapping_mul(PRIME);
    }
    hash
}
