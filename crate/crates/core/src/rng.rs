//! Seeded random streams.
//!
//! Every random draw in the crate comes from ChaCha8 keyed by a `u64` seed,
//! with distinct stream numbers for distinct purposes. Sub-seeds for
//! experiment stages are derived by hashing a label together with the base
//! seed, so one seed reproduces a whole run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Identifier stored next to every seed.
pub const RNG_ALGORITHM: &str = "chacha8";

pub(crate) const STREAM_EDGES: u64 = 0;
pub(crate) const STREAM_POSITIONS: u64 = 1;
pub(crate) const STREAM_INITIAL: u64 = 2;
pub(crate) const STREAM_EVENTS: u64 = 3;

pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// `SHA-256(label || 0x00 || seed_le)` truncated to 64 bits.
pub fn derive_seed(base: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(label.as_bytes());
    h.update([0u8]);
    h.update(base.to_le_bytes());
    let digest = h.finalize();
    let mut b = [0u8; 8];
    b.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(b)
}
