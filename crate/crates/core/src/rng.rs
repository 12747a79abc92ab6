//! Deterministic seed derivation.
//!
//! Every random stream in the pipeline (generation, weight init, epoch
//! shuffles, dropout masks) is a ChaCha8 stream seeded from the master seed
//! plus a purpose tag. Restarting from a checkpoint therefore replays the
//! exact streams of an uninterrupted run, and no stream depends on the
//! standard library's unstable hashers.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a over (master, tag, a, b). Stable across platforms and releases.
pub fn derive_seed(master: u64, tag: &str, a: u64, b: u64) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    let mut eat = |bytes: &[u8]| {
        for &x in bytes {
            h ^= u64::from(x);
            h = h.wrapping_mul(PRIME);
        }
    };
    eat(&master.to_le_bytes());
    eat(tag.as_bytes());
    eat(&a.to_le_bytes());
    eat(&b.to_le_bytes());
    h
}

/// A fresh deterministic stream for one purpose.
pub fn stream(master: u64, tag: &str, a: u64, b: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, tag, a, b))
}
