//! Seed derivation.
//!
//! Every random stream in the crate comes from a ChaCha8 generator seeded
//! with a 64-bit value. Child seeds are derived with [`mix64`], which mixes
//! the parent seed, a purpose tag and an index through SplitMix64
//! finalizers:
//!
//! ```text
//! h = splitmix64(parent ^ fnv1a64(tag))
//! h = splitmix64(h ^ splitmix64(index))
//! ```
//!
//! Adding trial `n + 1` therefore never changes the seeds of trials `0..=n`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn fnv1a64(tag: &str) -> u64 {
    tag.bytes().fold(0xCBF2_9CE4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

pub fn mix64(parent: u64, tag: &str, index: u64) -> u64 {
    let h = splitmix64(parent ^ fnv1a64(tag));
    splitmix64(h ^ splitmix64(index))
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn child_rng(parent: u64, tag: &str, index: u64) -> Rng {
    rng(mix64(parent, tag, index))
}

/// `ceil(fraction * n)` clamped to `[1, n]`, tolerant of representation
/// error such as `0.1 * 30 = 3.0000000000000004`.
pub fn fraction_count(fraction: f64, n: usize) -> usize {
    let raw = fraction * n as f64;
    let count = (raw - 1e-9 * raw.abs().max(1.0)).ceil() as usize;
    count.clamp(1, n.max(1))
}
