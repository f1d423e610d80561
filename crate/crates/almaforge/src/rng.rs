//! Seeded random streams.
//!
//! The project RNG is ChaCha8: a counter-based generator whose output stream
//! depends only on the seed, on every platform. Each consumer derives its own
//! stream from the run seed plus a label, so adding a new consumer never
//! shifts the draws seen by existing ones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a offset basis / prime, used to fold the label into the seed.
const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x1000_0000_01b3;

/// Hash a stream label. Stable across platforms and releases.
pub fn label_hash(label: &str) -> u64 {
    let mut h = FNV_OFFSET;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Independent deterministic stream for `(seed, label)`.
pub fn stream(seed: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ label_hash(label))
}
