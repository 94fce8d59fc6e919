//! Seed derivation for reproducible, order-independent parallel work.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use xxhash_rust::xxh3::xxh3_64_with_seed;

/// Mixes a master seed with a list of coordinates into a child seed.
///
/// The result depends only on the inputs, so cells and trials can be
/// evaluated in any order (or in parallel) and still draw the same streams.
pub fn derive_seed(master: u64, coords: &[u64]) -> u64 {
    let mut bytes = Vec::with_capacity(coords.len() * 8);
    for c in coords {
        bytes.extend_from_slice(&c.to_le_bytes());
    }
    xxh3_64_with_seed(&bytes, master)
}

/// The generator used everywhere a seeded stream is needed.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
