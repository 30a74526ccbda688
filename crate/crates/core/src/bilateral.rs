//! Edge-preserving bilateral smoothing.
//!
//! Each channel is filtered independently with its own `(σ₁, σ₂)` pair:
//!
//! ```text
//!            Σ_{m,n} f(i+m, j+n) · exp(-(m²+n²)/2σ₁²) · exp(-(f(i,j)-f(i+m,j+n))²/2σ₂²)
//! g(i, j) =  ─────────────────────────────────────────────────────────────────────────
//!            Σ_{m,n}              exp(-(m²+n²)/2σ₁²) · exp(-(f(i,j)-f(i+m,j+n))²/2σ₂²)
//! ```
//!
//! with `m, n ∈ [-w, w]` and image boundaries handled by edge replication,
//! which keeps every output a convex combination of window samples.
//!
//! Taps whose weight exponent falls below `-WEIGHT_ARG_CLIP` are skipped:
//! the center tap always contributes weight ≥ its spatial term, so a
//! skipped tap shifts the output by less than `e⁻⁴⁰` — far beneath any
//! tolerance used in this crate. The row-range kernel
//! [`bilateral_plane_rows`] is exposed so callers can split an image across
//! threads; per-pixel sums are sequential, so the split cannot change bits.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::image::{Image, CHANNELS};
use crate::math;
use crate::params::PARAM_COUNT;
use crate::pipeline::TangentBundle;

/// Weight exponents below `-WEIGHT_ARG_CLIP` are treated as zero.
pub const WEIGHT_ARG_CLIP: f64 = 40.0;

/// Precomputed window taps for one `(w, σ₁)` pair: offsets in row-major
/// `(dy, dx)` order, spatial weights, and squared distances. Taps with a
/// negligible spatial weight are dropped up front.
#[derive(Debug, Clone)]
pub struct Taps {
    pub dy: Vec<isize>,
    pub dx: Vec<isize>,
    pub spatial: Vec<f64>,
    pub sq_dist: Vec<f64>,
}

pub fn build_taps(half: usize, sigma1: f64) -> Taps {
    let c1 = -0.5 / (sigma1 * sigma1);
    let mut taps = Taps {
        dy: Vec::new(),
        dx: Vec::new(),
        spatial: Vec::new(),
        sq_dist: Vec::new(),
    };
    let w = half as isize;
    for m in -w..=w {
        for n in -w..=w {
            let sq = (m * m + n * n) as f64;
            let arg = sq * c1;
            if arg >= -WEIGHT_ARG_CLIP {
                taps.dy.push(m);
                taps.dx.push(n);
                taps.spatial.push(math::exp(arg));
                taps.sq_dist.push(sq);
            }
        }
    }
    taps
}

fn check_sigmas(sigma1: &[f64; 3], sigma2: &[f64; 3], half: usize) -> Result<()> {
    for &s in sigma1 {
        if !s.is_finite() || s <= 0.0 {
            return Err(CoreError::InvalidParam {
                name: "sigma1",
                value: s,
                min: f64::MIN_POSITIVE,
                max: f64::INFINITY,
            });
        }
    }
    for &s in sigma2 {
        if !s.is_finite() || s <= 0.0 {
            return Err(CoreError::InvalidParam {
                name: "sigma2",
                value: s,
                min: f64::MIN_POSITIVE,
                max: f64::INFINITY,
            });
        }
    }
    if half == 0 {
        return Err(CoreError::InvalidConfig {
            message: alloc::string::String::from("window half-width must be at least 1"),
        });
    }
    Ok(())
}

/// Filter one channel plane for output rows `[row_start, row_start + k)`,
/// where `k = out.len() / width`. This is the unit of work for thread-level
/// parallelism; output bits do not depend on how rows are batched.
pub fn bilateral_plane_rows(
    plane: &[f64],
    height: usize,
    width: usize,
    taps: &Taps,
    sigma2: f64,
    row_start: usize,
    out: &mut [f64],
) {
    debug_assert_eq!(plane.len(), height * width);
    debug_assert_eq!(out.len() % width, 0);
    let c2 = -0.5 / (sigma2 * sigma2);
    let ntaps = taps.dy.len();
    let rows = out.len() / width;
    // per-tap clamped source row bases, refreshed per output row
    let mut row_base = vec![0usize; ntaps];
    for r in 0..rows {
        let i = row_start + r;
        for t in 0..ntaps {
            let y = (i as isize + taps.dy[t]).clamp(0, height as isize - 1) as usize;
            row_base[t] = y * width;
        }
        let center_row = &plane[i * width..(i + 1) * width];
        let out_row = &mut out[r * width..(r + 1) * width];
        let interior = width > 2 * taps_max_reach(taps);
        let reach = taps_max_reach(taps);
        for j in 0..width {
            let c = center_row[j];
            let mut num = 0.0;
            let mut den = 0.0;
            if interior && j >= reach && j < width - reach {
                for t in 0..ntaps {
                    let f = plane[row_base[t] + (j as isize + taps.dx[t]) as usize];
                    let d = c - f;
                    let arg = d * d * c2;
                    if arg >= -WEIGHT_ARG_CLIP {
                        let wgt = taps.spatial[t] * math::exp(arg);
                        den += wgt;
                        num += wgt * f;
                    }
                }
            } else {
                for t in 0..ntaps {
                    let x = (j as isize + taps.dx[t]).clamp(0, width as isize - 1) as usize;
                    let f = plane[row_base[t] + x];
                    let d = c - f;
                    let arg = d * d * c2;
                    if arg >= -WEIGHT_ARG_CLIP {
                        let wgt = taps.spatial[t] * math::exp(arg);
                        den += wgt;
                        num += wgt * f;
                    }
                }
            }
            out_row[j] = num / den;
        }
    }
}

fn taps_max_reach(taps: &Taps) -> usize {
    taps.dx.iter().map(|d| d.unsigned_abs()).max().unwrap_or(0)
}

/// Bilateral-filter all three channels with per-channel sigmas.
pub fn bilateral(img: &Image, sigma1: &[f64; 3], sigma2: &[f64; 3], half: usize) -> Result<Image> {
    check_sigmas(sigma1, sigma2, half)?;
    let (h, w) = (img.height(), img.width());
    let mut out = Image::zeros(h, w);
    for c in 0..CHANNELS {
        let plane = img.channel_plane(c);
        let taps = build_taps(half, sigma1[c]);
        let mut filtered = vec![0.0; h * w];
        bilateral_plane_rows(&plane, h, w, &taps, sigma2[c], 0, &mut filtered);
        out.set_channel_plane(c, &filtered);
    }
    Ok(out)
}

/// Forward-mode smoothing step: filters `bundle.value` in place and updates
/// all eight tangents, accounting for both the σ parameter tangents of this
/// channel and the dependence of the range weights on upstream pixel values.
///
/// `dsq[k]` is `dθ_k/draw_k` from the squash; channel `c` consumes indices
/// `2 + c` (σ₁) and `5 + c` (σ₂). The value accumulation uses the same tap
/// order and arithmetic as [`bilateral_plane_rows`], so the value image is
/// bit-identical to the plain forward pass.
pub fn bilateral_jvp(
    bundle: &mut TangentBundle,
    sigma1: &[f64; 3],
    sigma2: &[f64; 3],
    half: usize,
    dsq: &[f64; PARAM_COUNT],
) -> Result<()> {
    check_sigmas(sigma1, sigma2, half)?;
    let (h, w) = (bundle.value.height(), bundle.value.width());
    for c in 0..CHANNELS {
        let plane = bundle.value.channel_plane(c);
        let tangent_planes: Vec<Vec<f64>> = bundle
            .tangents
            .iter()
            .map(|t| t.channel_plane(c))
            .collect();
        let taps = build_taps(half, sigma1[c]);
        let mut out_plane = vec![0.0; h * w];
        let mut out_tangents = vec![vec![0.0; h * w]; PARAM_COUNT];
        jvp_channel(
            &plane,
            &tangent_planes,
            h,
            w,
            &taps,
            sigma1[c],
            sigma2[c],
            2 + c,
            dsq[2 + c],
            5 + c,
            dsq[5 + c],
            &mut out_plane,
            &mut out_tangents,
        );
        bundle.value.set_channel_plane(c, &out_plane);
        for (t, tp) in bundle.tangents.iter_mut().zip(out_tangents.iter()) {
            t.set_channel_plane(c, tp);
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn jvp_channel(
    plane: &[f64],
    tangents: &[Vec<f64>],
    height: usize,
    width: usize,
    taps: &Taps,
    sigma1: f64,
    sigma2: f64,
    k_s1: usize,
    ds1_draw: f64,
    k_s2: usize,
    ds2_draw: f64,
    out: &mut [f64],
    out_tangents: &mut [Vec<f64>],
) {
    let c2 = -0.5 / (sigma2 * sigma2);
    // weight log-derivatives: d ln w / dσ₁ = (m²+n²)/σ₁³,
    // d ln w / dσ₂ = d²/σ₂³, d ln w / d(f_c - f_t) = -(f_c - f_t)/σ₂²
    let inv_s1_cubed = 1.0 / (sigma1 * sigma1 * sigma1);
    let inv_s2_sq = 1.0 / (sigma2 * sigma2);
    let inv_s2_cubed = inv_s2_sq / sigma2;
    let ntaps = taps.dy.len();
    let mut row_base = vec![0usize; ntaps];
    let mut cdot = [0.0; PARAM_COUNT];
    let mut numdot = [0.0; PARAM_COUNT];
    let mut dendot = [0.0; PARAM_COUNT];
    for i in 0..height {
        for t in 0..ntaps {
            let y = (i as isize + taps.dy[t]).clamp(0, height as isize - 1) as usize;
            row_base[t] = y * width;
        }
        for j in 0..width {
            let p = i * width + j;
            let c = plane[p];
            for k in 0..PARAM_COUNT {
                cdot[k] = tangents[k][p];
                numdot[k] = 0.0;
                dendot[k] = 0.0;
            }
            let mut num = 0.0;
            let mut den = 0.0;
            for t in 0..ntaps {
                let x = (j as isize + taps.dx[t]).clamp(0, width as isize - 1) as usize;
                let q = row_base[t] + x;
                let f = plane[q];
                let d = c - f;
                let arg = d * d * c2;
                if arg >= -WEIGHT_ARG_CLIP {
                    let wgt = taps.spatial[t] * math::exp(arg);
                    den += wgt;
                    num += wgt * f;
                    let wgt_b = wgt * (-d * inv_s2_sq);
                    let a_term = wgt * taps.sq_dist[t] * inv_s1_cubed * ds1_draw;
                    let c_term = wgt * d * d * inv_s2_cubed * ds2_draw;
                    for k in 0..PARAM_COUNT {
                        let fdot = tangents[k][q];
                        let mut wdot = wgt_b * (cdot[k] - fdot);
                        if k == k_s1 {
                            wdot += a_term;
                        }
                        if k == k_s2 {
                            wdot += c_term;
                        }
                        dendot[k] += wdot;
                        numdot[k] += wdot * f + wgt * fdot;
                    }
                }
            }
            let g = num / den;
            out[p] = g;
            for k in 0..PARAM_COUNT {
                out_tangents[k][p] = (numdot[k] - g * dendot[k]) / den;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn random_image(h: usize, w: usize, seed: u64) -> Image {
        let mut rng = SplitMix64::new(seed);
        Image::from_fn(h, w, |_, _| {
            [rng.next_f64(), rng.next_f64(), rng.next_f64()]
        })
    }

    #[test]
    fn constant_image_is_fixed_point() {
        let img = Image::constant(9, 9, 0.42);
        for &s1 in &[0.1, 1.0, 5.0] {
            for &s2 in &[0.01, 0.5, 1.0] {
                let out = bilateral(&img, &[s1; 3], &[s2; 3], 2).unwrap();
                for (a, b) in out.data().iter().zip(img.data()) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn huge_range_sigma_reduces_to_gaussian_blur() {
        // With σ₂ = 1e6 the range term is ~1 and the filter becomes a plain
        // spatial Gaussian; compare against a direct convolution with the
        // same window and edge replication.
        let img = random_image(12, 10, 77);
        let s1 = 1.3;
        let half = 2;
        let out = bilateral(&img, &[s1; 3], &[1e6; 3], half).unwrap();
        let h = img.height() as isize;
        let w = img.width() as isize;
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    let mut num = 0.0;
                    let mut den = 0.0;
                    for m in -(half as isize)..=half as isize {
                        for n in -(half as isize)..=half as isize {
                            let wgt =
                                math::exp(-((m * m + n * n) as f64) / (2.0 * s1 * s1));
                            let yy = (y + m).clamp(0, h - 1) as usize;
                            let xx = (x + n).clamp(0, w - 1) as usize;
                            num += wgt * img.get(yy, xx, c);
                            den += wgt;
                        }
                    }
                    let expect = num / den;
                    assert!(
                        (out.get(y as usize, x as usize, c) - expect).abs() < 1e-6,
                        "pixel ({y},{x},{c})"
                    );
                }
            }
        }
    }

    #[test]
    fn three_by_three_center_tap_literal() {
        // Single bright center on black, σ₁ = 1, σ₂ = 0.5, w = 1: evaluate
        // the window sum term by term.
        let mut img = Image::zeros(3, 3);
        for c in 0..3 {
            img.set(1, 1, c, 1.0);
        }
        let out = bilateral(&img, &[1.0; 3], &[0.5; 3], 1).unwrap();
        let mut num = 0.0;
        let mut den = 0.0;
        for m in -1i32..=1 {
            for n in -1i32..=1 {
                let f = if m == 0 && n == 0 { 1.0 } else { 0.0 };
                let spatial = math::exp(-((m * m + n * n) as f64) / 2.0);
                let range = math::exp(-(1.0 - f) * (1.0 - f) / (2.0 * 0.25));
                num += f * spatial * range;
                den += spatial * range;
            }
        }
        let expect = num / den;
        assert!(
            (out.get(1, 1, 0) - expect).abs() < 1e-12,
            "got {} want {expect}",
            out.get(1, 1, 0)
        );
    }

    #[test]
    fn output_is_convex_combination_of_window() {
        let img = random_image(11, 13, 5);
        let out = bilateral(&img, &[0.8, 1.5, 3.0], &[0.05, 0.3, 0.9], 2).unwrap();
        let h = img.height() as isize;
        let w = img.width() as isize;
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    let mut lo = f64::INFINITY;
                    let mut hi = f64::NEG_INFINITY;
                    for m in -2..=2isize {
                        for n in -2..=2isize {
                            let v = img.get(
                                (y + m).clamp(0, h - 1) as usize,
                                (x + n).clamp(0, w - 1) as usize,
                                c,
                            );
                            lo = lo.min(v);
                            hi = hi.max(v);
                        }
                    }
                    let v = out.get(y as usize, x as usize, c);
                    assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
                }
            }
        }
    }

    #[test]
    fn row_splits_are_bit_identical() {
        let img = random_image(16, 9, 31);
        let plane = img.channel_plane(1);
        let taps = build_taps(2, 1.1);
        let mut whole = vec![0.0; 16 * 9];
        bilateral_plane_rows(&plane, 16, 9, &taps, 0.2, 0, &mut whole);
        let mut parts = vec![0.0; 16 * 9];
        let (top, rest) = parts.split_at_mut(5 * 9);
        let (mid, bot) = rest.split_at_mut(4 * 9);
        bilateral_plane_rows(&plane, 16, 9, &taps, 0.2, 0, top);
        bilateral_plane_rows(&plane, 16, 9, &taps, 0.2, 5, mid);
        bilateral_plane_rows(&plane, 16, 9, &taps, 0.2, 9, bot);
        assert_eq!(whole, parts);
    }

    #[test]
    fn tiny_spatial_sigma_is_identity() {
        let img = random_image(8, 8, 13);
        let out = bilateral(&img, &[0.1; 3], &[0.5; 3], 2).unwrap();
        for (a, b) in out.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_offset_commutes_in_spatial_limit() {
        let img = random_image(9, 9, 21);
        let shifted = img.map(|v| v + 0.25);
        let s1 = [1.5; 3];
        let s2 = [1e7; 3];
        let a = bilateral(&img, &s1, &s2, 2).unwrap();
        let b = bilateral(&shifted, &s1, &s2, 2).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x + 0.25 - y).abs() < 1e-6);
        }
    }

    #[test]
    fn rejects_bad_sigmas() {
        let img = Image::zeros(4, 4);
        assert!(bilateral(&img, &[0.0; 3], &[0.1; 3], 2).is_err());
        assert!(bilateral(&img, &[1.0; 3], &[-1.0; 3], 2).is_err());
        assert!(bilateral(&img, &[1.0; 3], &[0.1; 3], 0).is_err());
    }
}
