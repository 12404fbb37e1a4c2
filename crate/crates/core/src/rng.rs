//! Seeded randomness.
//!
//! Every random draw in the toolkit comes from SplitMix64 (64-bit state,
//! Steele/Lea/Flood constants, as implemented by `rand_xoshiro`). Uniform
//! reals use the top 53 bits of one `next_u64` output; Gaussian draws use
//! `rand_distr::StandardNormal`. Identical seeds therefore give bit-identical
//! streams on every platform.

use rand_core::{RngCore, SeedableRng};
pub use rand_xoshiro::SplitMix64;

pub fn seeded(seed: u64) -> SplitMix64 {
    SplitMix64::seed_from_u64(seed)
}

/// Uniform draw in `[0, 1)`.
pub fn unit(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform draw in `[lo, hi)`.
pub fn uniform(rng: &mut impl RngCore, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * unit(rng)
}

/// Uniform index in `0..n` (multiply-shift reduction of one 64-bit draw).
pub fn index(rng: &mut impl RngCore, n: usize) -> usize {
    assert!(n > 0, "index range must be non-empty");
    ((rng.next_u64() as u128 * n as u128) >> 64) as usize
}

pub fn standard_normal(rng: &mut impl RngCore) -> f64 {
    use rand_distr::Distribution;
    rand_distr::StandardNormal.sample(rng)
}
