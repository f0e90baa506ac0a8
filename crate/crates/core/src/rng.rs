//! Deterministic seed derivation.
//!
//! Every random stream is keyed by `(root_seed, tag, index)`, so results do
//! not depend on worker count or scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Stable 64-bit child seed: the first eight bytes (little-endian) of
/// `SHA-256(root_le || tag || 0x00 || index_le)`.
pub fn derive_seed(root: u64, tag: &str, index: u64) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(root.to_le_bytes());
    hasher.update(tag.as_bytes());
    hasher.update([0u8]);
    hasher.update(index.to_le_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A record of the seeds handed to child jobs, kept for run manifests.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SeedLog {
    pub entries: Vec<SeedEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeedEntry {
    pub tag: String,
    pub index: u64,
    pub seed: u64,
}

impl SeedLog {
    /// Derives a seed and records it.
    pub fn derive(&mut self, root: u64, tag: &str, index: u64) -> u64 {
        let seed = derive_seed(root, tag, index);
        self.entries.push(SeedEntry {
            tag: tag.to_string(),
            index,
            seed,
        });
        seed
    }

    pub fn extend(&mut self, other: SeedLog) {
        self.entries.extend(other.entries);
    }
}
