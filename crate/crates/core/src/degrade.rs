//! Synthetic low-light degradation and severity-tier calibration.
//!
//! A dark frame is manufactured from a well-exposed one as
//!
//! ```text
//! dark = quantize(clamp(α·bright + N(0, σ²), 0, 1), bits)
//! ```
//!
//! — attenuation, additive Gaussian read noise, then bit-depth
//! quantization. Noise is seeded and replays exactly; samples are drawn in
//! row-major order, one per sample, from [`SplitMix64`].

use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::image::{mean_intensity, Image};
use crate::math;
use crate::rng::SplitMix64;

/// Degradation parameters for one synthetic dark frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DegradeConfig {
    /// Light attenuation factor α ∈ (0, 1].
    pub attenuation: f64,
    /// Read-noise standard deviation in [0, 1] intensity units.
    pub read_noise_sigma: f64,
    /// Output bit depth, 1–16.
    pub quantize_bits: u32,
    pub seed: u64,
}

impl DegradeConfig {
    pub fn new(attenuation: f64, read_noise_sigma: f64, quantize_bits: u32, seed: u64) -> Self {
        DegradeConfig {
            attenuation,
            read_noise_sigma,
            quantize_bits,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.attenuation.is_finite() || self.attenuation <= 0.0 || self.attenuation > 1.0 {
            return Err(CoreError::InvalidParam {
                name: "attenuation",
                value: self.attenuation,
                min: f64::MIN_POSITIVE,
                max: 1.0,
            });
        }
        if !self.read_noise_sigma.is_finite() || self.read_noise_sigma < 0.0 {
            return Err(CoreError::InvalidParam {
                name: "read_noise_sigma",
                value: self.read_noise_sigma,
                min: 0.0,
                max: f64::INFINITY,
            });
        }
        if !(1..=16).contains(&self.quantize_bits) {
            return Err(CoreError::InvalidParam {
                name: "quantize_bits",
                value: self.quantize_bits as f64,
                min: 1.0,
                max: 16.0,
            });
        }
        Ok(())
    }
}

/// Severity tiers characterized by mean pixel intensity on the 0–255
/// scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tier {
    /// LL-N, mean intensity 3.2.
    Normal,
    /// LL-H, mean intensity 1.4.
    Hard,
    /// LL-E, mean intensity 0.9.
    Extreme,
}

impl Tier {
    pub fn name(self) -> &'static str {
        match self {
            Tier::Normal => "LL-N",
            Tier::Hard => "LL-H",
            Tier::Extreme => "LL-E",
        }
    }

    pub fn target_mean_255(self) -> f64 {
        match self {
            Tier::Normal => 3.2,
            Tier::Hard => 1.4,
            Tier::Extreme => 0.9,
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "LL-N" => Ok(Tier::Normal),
            "LL-H" => Ok(Tier::Hard),
            "LL-E" => Ok(Tier::Extreme),
            other => Err(CoreError::InvalidConfig {
                message: alloc::format!("unknown tier '{other}' (expected LL-N, LL-H or LL-E)"),
            }),
        }
    }

    pub fn all() -> [Tier; 3] {
        [Tier::Normal, Tier::Hard, Tier::Extreme]
    }
}

/// Attenuate, add seeded Gaussian read noise, clamp to [0, 1]. No
/// quantization: with σ = 0 and α ≤ 1 this scales the mean exactly by α.
pub fn degrade_linear(img: &Image, attenuation: f64, read_noise_sigma: f64, seed: u64) -> Image {
    let mut rng = SplitMix64::new(seed);
    if read_noise_sigma == 0.0 {
        img.map(|v| (attenuation * v).clamp(0.0, 1.0))
    } else {
        let data: Vec<f64> = img
            .data()
            .iter()
            .map(|&v| {
                (attenuation * v + read_noise_sigma * rng.next_gaussian()).clamp(0.0, 1.0)
            })
            .collect();
        Image::from_vec(img.height(), img.width(), data).expect("shape preserved")
    }
}

/// Snap every sample to the uniform grid of a `bits`-deep encoding:
/// `round(v·L)/L` with `L = 2^bits − 1` and half-away-from-zero rounding.
pub fn quantize(img: &Image, bits: u32) -> Image {
    let levels = ((1u32 << bits) - 1) as f64;
    img.map(|v| math::round(v * levels) / levels)
}

/// Full synthetic dark-frame construction.
pub fn synth_low_light(img: &Image, cfg: &DegradeConfig) -> Result<Image> {
    cfg.validate()?;
    Ok(quantize(
        &degrade_linear(img, cfg.attenuation, cfg.read_noise_sigma, cfg.seed),
        cfg.quantize_bits,
    ))
}

/// Tolerance on the fitted tier mean, in 0–255 units.
pub const TIER_FIT_TOL: f64 = 0.05;

/// Find the attenuation that brings a bright corpus to a tier's target
/// mean intensity, by bisection on α ∈ (0, 1] with noise held at zero.
///
/// The bisection objective is the pre-quantization mean (attenuation scales
/// it exactly; quantization makes the post-quantization mean a step
/// function that cannot hit arbitrary targets on small corpora). Errors if
/// even α = 1 leaves the corpus below target, reporting the reachable
/// range.
pub fn fit_attenuation(brights: &[Image], tier: Tier) -> Result<f64> {
    if brights.is_empty() {
        return Err(CoreError::InvalidConfig {
            message: alloc::string::String::from("attenuation fit needs a nonempty bright set"),
        });
    }
    let target = tier.target_mean_255();
    let mean_at = |alpha: f64| -> f64 {
        let mut sum = 0.0;
        let mut count = 0usize;
        for img in brights {
            let degraded = degrade_linear(img, alpha, 0.0, 0);
            sum += mean_intensity(&degraded) * degraded.data().len() as f64;
            count += degraded.data().len();
        }
        sum / count as f64
    };
    let at_full = mean_at(1.0);
    if at_full + TIER_FIT_TOL < target {
        return Err(CoreError::TargetUnreachable {
            target,
            achievable_min: 0.0,
            achievable_max: at_full,
        });
    }
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if mean_at(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let alpha = 0.5 * (lo + hi);
    let achieved = mean_at(alpha);
    if math::abs(achieved - target) > TIER_FIT_TOL {
        return Err(CoreError::TargetUnreachable {
            target,
            achievable_min: 0.0,
            achievable_max: at_full,
        });
    }
    Ok(alpha)
}
