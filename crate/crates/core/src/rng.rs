//! Seeded random streams.
//!
//! Every random draw in the crate comes from a [`ChaCha8Rng`] derived from a
//! master seed, a stream label and an index. Two different labels (or
//! indices) never share a stream, so parallel sweeps reproduce exactly no
//! matter how work is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn label_hash(label: &str) -> u64 {
    // FNV-1a
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Derive a child seed from `(master, label, index)`.
pub fn derive_seed(master: u64, label: &str, index: u64) -> u64 {
    mix(mix(master ^ label_hash(label)).wrapping_add(mix(index)))
}

/// Independent stream for `(master, label, index)`.
pub fn substream(master: u64, label: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, label, index))
}
