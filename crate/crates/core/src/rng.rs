//! Seeded, portable pseudo-randomness.
//!
//! Every stochastic choice in this crate (crop offsets, read noise, weight
//! initialization, dropout masks) is drawn from [`SplitMix64`], the 64-bit
//! mixer of Steele, Lea and Flood ("Fast splittable pseudorandom number
//! generators", OOPSLA 2014). It is tiny, has no global state, and produces
//! the same stream on every platform, so any artifact can be rebuilt
//! bit-for-bit from its recorded seed.
//!
//! Derived quantities are documented here because tests replay them:
//!
//! - `next_u64`: `state += 0x9E3779B97F4A7C15`, then `z = state`,
//!   `z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9`,
//!   `z = (z ^ (z >> 27)) * 0x94D049BB133111EB`, return `z ^ (z >> 31)`.
//! - `next_f64`: `(next_u64() >> 11) * 2^-53`, uniform on `[0, 1)`.
//! - `next_range(n)`: `next_u64() % n` (the modulo bias is negligible for
//!   the image-sized ranges used here).
//! - `next_gaussian`: Box–Muller on `u1 = 1 - next_f64()` (so `u1 ∈ (0,1]`)
//!   and `u2 = next_f64()`; the pair `(√(-2 ln u1)·cos(2πu2),
//!   √(-2 ln u1)·sin(2πu2))` is consumed cosine first.

use crate::math;

/// SplitMix64 pseudorandom generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitMix64 {
    state: u64,
    // spare half of the Box–Muller pair
    spare: Option<f64>,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed, spare: None }
    }

    /// Derive an independent stream for a sub-task, e.g. per-sample crops.
    ///
    /// The label and indices are folded into the seed with one extra mix
    /// step each, so streams for distinct `(label, index)` pairs do not
    /// collide in practice.
    pub fn derive(seed: u64, label: u64, index: u64) -> Self {
        let mut r = SplitMix64::new(seed ^ label.wrapping_mul(0xA24BAED4963EE407));
        let s = r.next_u64() ^ index.wrapping_mul(0x9FB21C651E98DF25);
        SplitMix64::new(s)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E3779B97F4A7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        z ^ (z >> 31)
    }

    /// Uniform `f64` on `[0, 1)` with 53 random bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / 9007199254740992.0)
    }

    /// Uniform integer in `[0, n)`. `n` must be nonzero.
    pub fn next_range(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        self.next_u64() % n
    }

    /// Standard normal deviate via Box–Muller; see module docs.
    pub fn next_gaussian(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        let r = math::sqrt(-2.0 * math::ln(u1));
        let theta = 2.0 * core::f64::consts::PI * u2;
        self.spare = Some(r * math::sin(theta));
        r * math::cos(theta)
    }
}

/// FNV-1a 64-bit digest, used to fingerprint frozen task assets.
pub fn fnv1a_64(bytes: impl Iterator<Item = u8>) -> u64 {
    let mut h: u64 = 0xCBF29CE484222325;
    for b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001B3);
    }
    h
}

/// Digest a slice of `f64` by its IEEE-754 bit patterns.
pub fn digest_f64(values: &[f64]) -> u64 {
    fnv1a_64(values.iter().flat_map(|v| v.to_bits().to_le_bytes()))
}
