//! Seed derivation for independent, order-insensitive random streams.
//!
//! Every random choice in the pipeline draws from a stream keyed by the run
//! seed plus the identity of the item being decided (a context, a page, a
//! sentence), so results do not depend on processing order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// A generator keyed by `seed` and the given key parts.
pub fn stream(seed: u64, parts: &[&[u8]]) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    ChaCha8Rng::from_seed(h.finalize().into())
}

/// Sub-seed for handing to APIs that take a plain `u64`.
pub fn derive(seed: u64, parts: &[&[u8]]) -> u64 {
    use rand::RngCore;
    stream(seed, parts).next_u64()
}
