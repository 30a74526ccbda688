//! The eight enhancement hyperparameters and the squash that produces them.
//!
//! Raw predictor outputs are unbounded; each component is mapped into its
//! usable range with a log-space sigmoid,
//!
//! ```text
//! θ(x) = θ_min · (θ_max / θ_min)^s(x),    s(x) = 1 / (1 + e^-x)
//! ```
//!
//! which is strictly increasing, surjective onto `(θ_min, θ_max)`, and maps
//! `x = 0` to the geometric mean of the bounds. Its derivative,
//! `dθ/dx = θ · ln(θ_max/θ_min) · s(x)(1 − s(x))`, is what chains predictor
//! gradients through the enhancement pipeline.
//!
//! Raw vector layout: `[a, γ, σ₁r, σ₁g, σ₁b, σ₂r, σ₂g, σ₂b]`.

use crate::error::{CoreError, Result};
use crate::math;

/// Number of enhancement hyperparameters.
pub const PARAM_COUNT: usize = 8;

/// Unsquashed parameter vector as emitted by the predictor.
pub type RawParams = [f64; PARAM_COUNT];

/// Inclusive bounds for one parameter component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamRange {
    pub min: f64,
    pub max: f64,
}

/// Component ranges: gain covers the full 1/256 attenuation regime, gamma
/// spans strong contrast changes in both directions, and the filter sigmas
/// span everything from a pass-through to an aggressive smooth.
pub const PARAM_RANGES: [ParamRange; PARAM_COUNT] = [
    ParamRange { min: 1.0, max: 256.0 }, // a
    ParamRange { min: 0.2, max: 5.0 },   // gamma
    ParamRange { min: 0.1, max: 5.0 },   // sigma1 r
    ParamRange { min: 0.1, max: 5.0 },   // sigma1 g
    ParamRange { min: 0.1, max: 5.0 },   // sigma1 b
    ParamRange { min: 0.01, max: 1.0 },  // sigma2 r
    ParamRange { min: 0.01, max: 1.0 },  // sigma2 g
    ParamRange { min: 0.01, max: 1.0 },  // sigma2 b
];

pub const PARAM_NAMES: [&str; PARAM_COUNT] = [
    "a", "gamma", "sigma1.r", "sigma1.g", "sigma1.b", "sigma2.r", "sigma2.g", "sigma2.b",
];

/// The squashed enhancement parameters: exposure gain, gamma exponent, and
/// per-channel spatial/range standard deviations for the bilateral smoother.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LLEParams {
    pub a: f64,
    pub gamma: f64,
    pub sigma1: [f64; 3],
    pub sigma2: [f64; 3],
}

impl LLEParams {
    /// Parameters whose pipeline output approximates the input: unit gain,
    /// unit gamma, and a spatial sigma small enough that the bilateral
    /// window collapses onto the center tap.
    pub fn identity() -> Self {
        LLEParams {
            a: 1.0,
            gamma: 1.0,
            sigma1: [PARAM_RANGES[2].min; 3],
            sigma2: [PARAM_RANGES[5].min; 3],
        }
    }

    pub fn to_array(&self) -> [f64; PARAM_COUNT] {
        [
            self.a,
            self.gamma,
            self.sigma1[0],
            self.sigma1[1],
            self.sigma1[2],
            self.sigma2[0],
            self.sigma2[1],
            self.sigma2[2],
        ]
    }

    pub fn from_array(v: [f64; PARAM_COUNT]) -> Self {
        LLEParams {
            a: v[0],
            gamma: v[1],
            sigma1: [v[2], v[3], v[4]],
            sigma2: [v[5], v[6], v[7]],
        }
    }

    /// Check finiteness and bounds for every component.
    pub fn validate(&self) -> Result<()> {
        for (k, (&v, range)) in self.to_array().iter().zip(PARAM_RANGES.iter()).enumerate() {
            if !v.is_finite() || v < range.min || v > range.max {
                return Err(CoreError::InvalidParam {
                    name: PARAM_NAMES[k],
                    value: v,
                    min: range.min,
                    max: range.max,
                });
            }
        }
        Ok(())
    }
}

/// Map a raw vector into bounded parameters; also returns the elementwise
/// derivative `dθ_k/dx_k` needed to chain gradients back to the predictor.
pub fn squash(raw: &RawParams) -> (LLEParams, [f64; PARAM_COUNT]) {
    let mut theta = [0.0; PARAM_COUNT];
    let mut dtheta = [0.0; PARAM_COUNT];
    for k in 0..PARAM_COUNT {
        let ParamRange { min, max } = PARAM_RANGES[k];
        let log_ratio = math::ln(max / min);
        let s = sigmoid(raw[k]);
        // the clamp only absorbs the final-ulp overshoot of exp at
        // saturated sigmoids
        let t = (min * math::exp(log_ratio * s)).clamp(min, max);
        theta[k] = t;
        dtheta[k] = t * log_ratio * s * (1.0 - s);
    }
    (LLEParams::from_array(theta), dtheta)
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + math::exp(-x))
    } else {
        let e = math::exp(x);
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_raw_gives_geometric_means() {
        let (p, _) = squash(&[0.0; 8]);
        assert!((p.a - 16.0).abs() < 1e-12);
        assert!((p.gamma - 1.0).abs() < 1e-12);
        assert!((p.sigma1[0] - math::sqrt(0.5)).abs() < 1e-12);
        assert!((p.sigma2[0] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn extremes_approach_bounds() {
        let (lo, _) = squash(&[-60.0; 8]);
        let (hi, _) = squash(&[60.0; 8]);
        for k in 0..8 {
            assert!((lo.to_array()[k] - PARAM_RANGES[k].min).abs() < 1e-9);
            assert!((hi.to_array()[k] - PARAM_RANGES[k].max).abs() < 1e-9);
        }
    }

    #[test]
    fn squash_is_strictly_increasing() {
        let mut prev = squash(&[-8.0; 8]).0.to_array();
        let mut x = -8.0;
        while x < 8.0 {
            x += 0.25;
            let cur = squash(&[x; 8]).0.to_array();
            for k in 0..8 {
                assert!(cur[k] > prev[k]);
            }
            prev = cur;
        }
    }

    #[test]
    fn derivative_matches_central_difference() {
        let h = 1e-6;
        for &x in &[0.3, -1.7, 2.5] {
            let raw = [x; 8];
            let (_, d) = squash(&raw);
            for k in 0..8 {
                let mut up = raw;
                up[k] += h;
                let mut dn = raw;
                dn[k] -= h;
                let fd = (squash(&up).0.to_array()[k] - squash(&dn).0.to_array()[k]) / (2.0 * h);
                assert!(
                    math::close(d[k], fd, 1e-6, 1e-12),
                    "component {k} at raw {x}: analytic {} vs fd {fd}",
                    d[k]
                );
            }
        }
    }

    #[test]
    fn identity_params_validate() {
        LLEParams::identity().validate().unwrap();
    }

    #[test]
    fn out_of_range_rejected() {
        let mut p = LLEParams::identity();
        p.a = 0.5;
        assert!(p.validate().is_err());
        p.a = f64::NAN;
        assert!(p.validate().is_err());
    }
}
