//! Literal per-pixel oracle for the bilateral filter: a naive evaluation
//! of the window sum, term by term, with nothing precomputed and no
//! weight clipping. The optimized filter must agree within 1e-6 absolute.

mod common;

use common::{log_uniform, random_image_in};
use lle_core::bilateral::bilateral;
use lle_core::rng::SplitMix64;
use lle_core::Image;

fn bilateral_literal(img: &Image, sigma1: &[f64; 3], sigma2: &[f64; 3], w: usize) -> Image {
    let h = img.height() as isize;
    let wd = img.width() as isize;
    let wi = w as isize;
    Image::from_fn(img.height(), img.width(), |y, x| {
        let mut px = [0.0; 3];
        for (c, out) in px.iter_mut().enumerate() {
            let center = img.get(y, x, c);
            let mut num = 0.0;
            let mut den = 0.0;
            for n in -wi..=wi {
                for m in -wi..=wi {
                    let yy = (y as isize + m).clamp(0, h - 1) as usize;
                    let xx = (x as isize + n).clamp(0, wd - 1) as usize;
                    let f = img.get(yy, xx, c);
                    let spatial =
                        (-((m * m + n * n) as f64) / (2.0 * sigma1[c] * sigma1[c])).exp();
                    let range =
                        (-((center - f) * (center - f)) / (2.0 * sigma2[c] * sigma2[c])).exp();
                    num += f * spatial * range;
                    den += spatial * range;
                }
            }
            *out = num / den;
        }
        px
    })
}

#[test]
fn optimized_filter_matches_literal_oracle() {
    let mut rng = SplitMix64::new(0xB11A7E4A1);
    for case in 0..50 {
        let img = random_image_in(16, 16, 0.0, 1.0, 7000 + case);
        let mut draw3 = |lo: f64, hi: f64| {
            [
                log_uniform(&mut rng, lo, hi),
                log_uniform(&mut rng, lo, hi),
                log_uniform(&mut rng, lo, hi),
            ]
        };
        let sigma1 = draw3(0.1, 5.0);
        let sigma2 = draw3(0.01, 1.0);
        let w = 1 + (rng.next_u64() % 2) as usize;
        let fast = bilateral(&img, &sigma1, &sigma2, w).unwrap();
        let slow = bilateral_literal(&img, &sigma1, &sigma2, w);
        for (i, (a, b)) in fast.data().iter().zip(slow.data()).enumerate() {
            assert!(
                (a - b).abs() < 1e-6,
                "case {case} sample {i}: {a} vs {b} (σ1 {sigma1:?} σ2 {sigma2:?} w {w})"
            );
        }
    }
}

#[test]
fn oracle_agreement_on_mid_pipeline_ranges() {
    // mid-pipeline inputs can exceed 1 after exposure gain
    let mut rng = SplitMix64::new(0xFADE);
    for case in 0..10 {
        let img = random_image_in(12, 12, 0.0, 40.0, 9000 + case);
        let sigma1 = [log_uniform(&mut rng, 0.1, 5.0); 3];
        let sigma2 = [log_uniform(&mut rng, 0.01, 1.0); 3];
        let fast = bilateral(&img, &sigma1, &sigma2, 2).unwrap();
        let slow = bilateral_literal(&img, &sigma1, &sigma2, 2);
        for (a, b) in fast.data().iter().zip(slow.data()) {
            assert!((a - b).abs() < 1e-6, "case {case}: {a} vs {b}");
        }
    }
}
