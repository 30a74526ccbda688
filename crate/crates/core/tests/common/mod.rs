//! Shared helpers for the oracle test suites.

use lle_core::rng::SplitMix64;
use lle_core::Image;

/// Random image with samples in `[lo, hi]`.
pub fn random_image_in(h: usize, w: usize, lo: f64, hi: f64, seed: u64) -> Image {
    let mut rng = SplitMix64::new(seed);
    Image::from_fn(h, w, |_, _| {
        let mut s = || lo + (hi - lo) * rng.next_f64();
        [s(), s(), s()]
    })
}

/// Log-uniform draw in `[lo, hi]`.
pub fn log_uniform(rng: &mut SplitMix64, lo: f64, hi: f64) -> f64 {
    (lo.ln() + (hi.ln() - lo.ln()) * rng.next_f64()).exp()
}

pub fn assert_close(a: f64, b: f64, rtol: f64, atol: f64, ctx: &str) {
    let diff = (a - b).abs();
    let bound = atol + rtol * b.abs().max(a.abs());
    assert!(
        diff <= bound,
        "{ctx}: {a} vs {b} (diff {diff:.3e} > bound {bound:.3e})"
    );
}
