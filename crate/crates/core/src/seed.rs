//! Stable seed derivation.
//!
//! Every derived seed is the first eight bytes (little-endian) of a SHA-256
//! digest over the little-endian encodings of its inputs. The mixing is
//! platform independent and never changes between releases, so corpora built
//! from the same master seed stay reproducible.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Hashes a sequence of byte strings into a 64-bit value.
///
/// Each part is length-prefixed so that `["ab", "c"]` and `["a", "bc"]` differ.
pub fn stable_hash(parts: &[&[u8]]) -> u64 {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part);
    }
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

/// Derives a child seed from a parent seed and an index.
pub fn mix(seed: u64, index: u64) -> u64 {
    stable_hash(&[&seed.to_le_bytes(), &index.to_le_bytes()])
}

/// Derives a seed from a parent seed, a domain tag and an index.
///
/// The tag keeps independent streams (labels, environments, shuffles) apart
/// even when they share the parent seed and index.
pub fn mix_tagged(seed: u64, tag: &str, index: u64) -> u64 {
    stable_hash(&[&seed.to_le_bytes(), tag.as_bytes(), &index.to_le_bytes()])
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
