//! Stable seed derivation.
//!
//! Seeds are derived with SHA-256 so they do not depend on the platform or on
//! `std`'s randomized hasher.

use sha2::{Digest, Sha256};

pub fn derive_seed(base: u64, label: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update((label.len() as u64).to_le_bytes());
    h.update(label.as_bytes());
    h.update(index.to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

pub fn hash_bytes(bytes: &[u8]) -> [u8; 32] {
    Sha256::digest(bytes).into()
}

pub fn seed_from_bytes(bytes: &[u8]) -> u64 {
    let digest = hash_bytes(bytes);
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}
