//! Seeded random number generation.
//!
//! Every stochastic routine in the crate draws from [`SeededRng`], a
//! ChaCha8 stream cipher generator keyed by a 64-bit seed. ChaCha8 output
//! is specified bit-for-bit and does not depend on platform word size or
//! endianness, so a given seed reproduces the same trajectory everywhere.
//!
//! Independent streams (sweep cells, POLITEX iterations, sampler workers)
//! are derived with [`sub_seed`], a SplitMix64 mix of the parent seed and a
//! stream index.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type SeededRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// SplitMix64 finaliser applied to `seed ^ golden * (stream + 1)`.
pub fn sub_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ 0x9E37_79B9_7F4A_7C15u64.wrapping_mul(stream.wrapping_add(1));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Inverse-CDF draw from a probability vector.
///
/// Falls back to the last index with positive mass when rounding leaves
/// the uniform draw above the accumulated total.
pub fn sample_categorical<R: Rng + ?Sized>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs
        .iter()
        .rposition(|&p| p > 0.0)
        .unwrap_or(probs.len().saturating_sub(1))
}
