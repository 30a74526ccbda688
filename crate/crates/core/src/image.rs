//! The universal pixel container: an `H×W×3` raster of `f64` samples.
//!
//! Samples are stored row-major, RGB interleaved, in linear units where a
//! stored 8-bit value `v` corresponds to `v / 255`. Decoded images always
//! lie in `[0, 1]`; mid-pipeline images may exceed 1 (exposure gain is not
//! clamped) but must stay finite and non-negative. Clamping happens only
//! at export.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::math;
use crate::rng::SplitMix64;

pub const CHANNELS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    /// All-zero image.
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; height * width * CHANNELS],
        }
    }

    /// Constant-valued image.
    pub fn constant(height: usize, width: usize, value: f64) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width * CHANNELS],
        }
    }

    /// Wrap an interleaved RGB sample buffer. Fails if the length is not
    /// `height * width * 3`.
    pub fn from_vec(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        let expected = height * width * CHANNELS;
        if data.len() != expected {
            return Err(CoreError::ShapeMismatch {
                what: "image buffer",
                expected: alloc::format!("{expected} samples ({height}x{width}x3)"),
                actual: alloc::format!("{} samples", data.len()),
            });
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// Build from a per-pixel closure returning `(r, g, b)`.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(height * width * CHANNELS);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(y, x));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * CHANNELS + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * CHANNELS + c] = v;
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn require_same_shape(&self, other: &Image, what: &'static str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(CoreError::ShapeMismatch {
                what,
                expected: alloc::format!("{}x{}", self.height, self.width),
                actual: alloc::format!("{}x{}", other.height, other.width),
            })
        }
    }

    /// Extract one channel as a contiguous plane.
    pub fn channel_plane(&self, c: usize) -> Vec<f64> {
        debug_assert!(c < CHANNELS);
        self.data.iter().skip(c).step_by(CHANNELS).copied().collect()
    }

    /// Overwrite one channel from a contiguous plane.
    pub fn set_channel_plane(&mut self, c: usize, plane: &[f64]) {
        debug_assert_eq!(plane.len(), self.pixel_count());
        for (dst, src) in self.data.iter_mut().skip(c).step_by(CHANNELS).zip(plane) {
            *dst = *src;
        }
    }

    /// Per-pixel luminance as the channel mean.
    pub fn luminance(&self) -> Vec<f64> {
        self.data
            .chunks_exact(CHANNELS)
            .map(|px| (px[0] + px[1] + px[2]) / 3.0)
            .collect()
    }

    /// Arithmetic mean over all samples, in `[0, 1]` units.
    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Samples clamped to `[0, 1]` (the export convention; never used
    /// mid-pipeline).
    pub fn clamped01(&self) -> Image {
        self.map(|v| v.clamp(0.0, 1.0))
    }
}

/// Mean pixel intensity on the 0–255 scale: `255 ×` the sample mean.
pub fn mean_intensity(img: &Image) -> f64 {
    255.0 * img.mean()
}

/// Mean squared error over all samples.
pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    a.require_same_shape(b, "mse")?;
    let n = a.data().len() as f64;
    let s: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(s / n)
}

/// Cap applied to PSNR so reports stay JSON-representable when the error
/// is exactly zero.
pub const PSNR_CAP_DB: f64 = 120.0;

/// Peak signal-to-noise ratio in dB against a peak of 1.0, computed on
/// export-clamped copies of both images.
pub fn psnr(img: &Image, reference: &Image) -> Result<f64> {
    let e = mse(&img.clamped01(), &reference.clamped01())?;
    if e <= 1e-12 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((-10.0 * math::log10(e)).min(PSNR_CAP_DB))
}

/// Pad an image to at least `size × size` by edge replication. Images that
/// are already large enough are returned as-is.
pub fn pad_to_min(img: &Image, size: usize) -> Image {
    if img.height >= size && img.width >= size {
        return img.clone();
    }
    let h = img.height.max(size);
    let w = img.width.max(size);
    Image::from_fn(h, w, |y, x| {
        let sy = y.min(img.height - 1);
        let sx = x.min(img.width - 1);
        [img.get(sy, sx, 0), img.get(sy, sx, 1), img.get(sy, sx, 2)]
    })
}

/// Deterministic seeded random crop.
///
/// Offsets are the first two draws of `SplitMix64::new(seed)`, row offset
/// first: `oy = next_range(h - size + 1)`, `ox = next_range(w - size + 1)`.
/// Images smaller than `size` are edge-replicated up to `size` first, which
/// keeps the crop shape fixed without disturbing intensity statistics.
pub fn random_crop(img: &Image, size: usize, seed: u64) -> Result<Image> {
    crop_impl(img, size, |r, limy, limx| {
        let mut rng = SplitMix64::new(r);
        let oy = rng.next_range(limy) as usize;
        let ox = rng.next_range(limx) as usize;
        (oy, ox)
    }, seed)
}

/// Deterministic center crop (ties broken toward the top-left).
pub fn center_crop(img: &Image, size: usize) -> Result<Image> {
    crop_impl(img, size, |_, limy, limx| {
        ((limy as usize - 1) / 2, (limx as usize - 1) / 2)
    }, 0)
}

fn crop_impl(
    img: &Image,
    size: usize,
    offsets: impl Fn(u64, u64, u64) -> (usize, usize),
    seed: u64,
) -> Result<Image> {
    if size == 0 {
        return Err(CoreError::InvalidConfig {
            message: alloc::string::String::from("crop size must be positive"),
        });
    }
    let padded;
    let src = if img.height < size || img.width < size {
        padded = pad_to_min(img, size);
        &padded
    } else {
        img
    };
    let limy = (src.height - size + 1) as u64;
    let limx = (src.width - size + 1) as u64;
    let (oy, ox) = offsets(seed, limy, limx);
    let mut data = Vec::with_capacity(size * size * CHANNELS);
    for y in 0..size {
        let row = ((oy + y) * src.width + ox) * CHANNELS;
        data.extend_from_slice(&src.data[row..row + size * CHANNELS]);
    }
    Image::from_vec(size, size, data)
}
