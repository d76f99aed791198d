//! Counter-derived seed streams.
//!
//! Every random draw in the simulator comes from a ChaCha generator seeded by
//! hashing a master seed together with a label and a counter, so the same
//! stream is reproduced no matter which worker thread asks for it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derives a 64-bit seed from a master seed, a label and an index.
pub fn derive_seed(master: u64, label: &str, index: u64) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update((label.len() as u64).to_le_bytes());
    hasher.update(label.as_bytes());
    hasher.update(index.to_le_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 digest has 32 bytes"))
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn stream(master: u64, label: &str, index: u64) -> ChaCha8Rng {
    rng_from_seed(derive_seed(master, label, index))
}
