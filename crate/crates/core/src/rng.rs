//! Seeded random streams keyed by name, independent of call order.

use std::hash::Hasher;

use fnv::FnvHasher;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A reproducible stream for `(seed, key, index)`.
pub fn keyed_rng(seed: u64, key: &str, index: u64) -> ChaCha8Rng {
    let mut h = FnvHasher::default();
    h.write_u64(seed);
    h.write(key.as_bytes());
    h.write_u8(0xff);
    h.write_u64(index);
    ChaCha8Rng::seed_from_u64(h.finish())
}
