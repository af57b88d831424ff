//! Deterministic randomness. One run seed fans out into named sub-streams so
//! that, e.g., chain sampling and edit drawing stay reproducible independently
//! of each other.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derive the RNG for a named sub-stream of `seed`. The same (seed, name)
/// pair yields the same stream on every platform.
pub fn sub_stream(seed: u64, name: &str) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(name.as_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}
