//! Deterministic seed derivation.
//!
//! A single root seed is split into independent sub-seeds by hashing a
//! string label (and optionally an index) into the stream. This keeps every
//! pipeline stage reproducible without threading RNG state between modules.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(mut hash: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a sub-seed for a named pipeline stage.
pub fn derive(root: u64, label: &str) -> u64 {
    let h = fnv1a(FNV_OFFSET, label.as_bytes());
    splitmix(root ^ h)
}

/// Derive a sub-seed for the `index`-th element of a named stage.
pub fn derive_indexed(root: u64, label: &str, index: u64) -> u64 {
    let h = fnv1a(FNV_OFFSET, label.as_bytes());
    splitmix(splitmix(root ^ h).wrapping_add(index.wrapping_mul(0x9e37_79b9_7f4a_7c15)))
}

/// Seeded RNG used everywhere randomness is needed.
pub fn rng(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}
