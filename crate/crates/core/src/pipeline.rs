//! The differentiable enhancement pipeline.
//!
//! Three operators — exposure gain `P_o = a·P_i`, gamma `P_o = P_i^γ`, and
//! bilateral smoothing — applied to the full image in a configurable order.
//! No operator clamps: clamping would zero gradients, so it is deferred to
//! image export.
//!
//! [`pipeline_jvp`] carries eight tangent images alongside the value, one
//! per raw parameter, giving exact directional derivatives of every output
//! pixel with respect to the unsquashed parameter vector. Forward mode is
//! the right shape here: eight parameters versus hundreds of thousands of
//! pixels.

use alloc::string::String;
use alloc::vec::Vec;

use crate::bilateral;
use crate::error::{CoreError, Result};
use crate::image::Image;
use crate::math;
use crate::params::{squash, LLEParams, RawParams, PARAM_COUNT};

/// Floor applied to the gamma operator's base so ln-terms in tangents stay
/// finite at black pixels.
pub const GAMMA_EPS: f64 = 1e-6;

/// One stage of the enhancement chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Operator {
    Exposure,
    Gamma,
    Smoothing,
}

impl Operator {
    pub fn letter(self) -> char {
        match self {
            Operator::Exposure => 'E',
            Operator::Gamma => 'G',
            Operator::Smoothing => 'S',
        }
    }

    pub fn from_letter(c: char) -> Result<Self> {
        match c.to_ascii_uppercase() {
            'E' => Ok(Operator::Exposure),
            'G' => Ok(Operator::Gamma),
            'S' => Ok(Operator::Smoothing),
            other => Err(CoreError::InvalidConfig {
                message: alloc::format!("unknown operator letter '{other}' (expected E, G or S)"),
            }),
        }
    }
}

/// Operator order plus the smoothing window half-width.
///
/// Each operator appears at most once; the window is `(2w+1)²` pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PipelineSpec {
    order: Vec<Operator>,
    window_half_width: usize,
}

impl PipelineSpec {
    pub fn new(order: Vec<Operator>, window_half_width: usize) -> Result<Self> {
        if order.is_empty() {
            return Err(CoreError::InvalidConfig {
                message: String::from("pipeline order must be nonempty"),
            });
        }
        for (i, op) in order.iter().enumerate() {
            if order[..i].contains(op) {
                return Err(CoreError::InvalidConfig {
                    message: alloc::format!("duplicate operator {:?} in pipeline order", op),
                });
            }
        }
        if window_half_width == 0 {
            return Err(CoreError::InvalidConfig {
                message: String::from("window half-width must be at least 1"),
            });
        }
        Ok(PipelineSpec {
            order,
            window_half_width,
        })
    }

    /// Parse a letter string such as `"EGS"`.
    pub fn parse(letters: &str, window_half_width: usize) -> Result<Self> {
        let order = letters
            .chars()
            .map(Operator::from_letter)
            .collect::<Result<Vec<_>>>()?;
        PipelineSpec::new(order, window_half_width)
    }

    pub fn order(&self) -> &[Operator] {
        &self.order
    }

    pub fn window_half_width(&self) -> usize {
        self.window_half_width
    }

    pub fn letters(&self) -> String {
        self.order.iter().map(|op| op.letter()).collect()
    }

    /// All six orderings of the three operators.
    pub fn all_orderings(window_half_width: usize) -> Vec<PipelineSpec> {
        ["EGS", "ESG", "GES", "GSE", "SEG", "SGE"]
            .iter()
            .map(|s| PipelineSpec::parse(s, window_half_width).expect("static order"))
            .collect()
    }

    /// The two-operator subsets in canonical order, plus the full chain.
    pub fn subset_variants(window_half_width: usize) -> Vec<PipelineSpec> {
        ["EG", "ES", "GS", "EGS"]
            .iter()
            .map(|s| PipelineSpec::parse(s, window_half_width).expect("static order"))
            .collect()
    }
}

impl Default for PipelineSpec {
    /// `[Exposure, Gamma, Smoothing]` with a 5×5 window.
    fn default() -> Self {
        PipelineSpec::parse("EGS", 2).expect("static order")
    }
}

/// Exposure operator: every sample multiplied by `a`, never clamped.
pub fn exposure(img: &Image, a: f64) -> Result<Image> {
    if !a.is_finite() || a <= 0.0 {
        return Err(CoreError::InvalidParam {
            name: "a",
            value: a,
            min: f64::MIN_POSITIVE,
            max: f64::INFINITY,
        });
    }
    Ok(img.map(|v| a * v))
}

/// Gamma operator: `max(v, ε)^g` with `ε = 1e-6`. `g = 1` is the exact
/// identity for samples at or above `ε`. Negative samples are an upstream
/// bug and are rejected.
pub fn gamma(img: &Image, g: f64) -> Result<Image> {
    if !g.is_finite() || g <= 0.0 {
        return Err(CoreError::InvalidParam {
            name: "gamma",
            value: g,
            min: f64::MIN_POSITIVE,
            max: f64::INFINITY,
        });
    }
    if let Some(&bad) = img.data().iter().find(|v| **v < 0.0) {
        return Err(CoreError::DomainError {
            what: "gamma operator input",
            value: bad,
        });
    }
    Ok(img.map(|v| math::powf(v.max(GAMMA_EPS), g)))
}

/// Apply the operators in `spec` order to the full image.
pub fn pipeline_apply(img: &Image, params: &LLEParams, spec: &PipelineSpec) -> Result<Image> {
    params.validate()?;
    let mut out = img.clone();
    for op in spec.order() {
        out = match op {
            Operator::Exposure => exposure(&out, params.a)?,
            Operator::Gamma => gamma(&out, params.gamma)?,
            Operator::Smoothing => bilateral::bilateral(
                &out,
                &params.sigma1,
                &params.sigma2,
                spec.window_half_width(),
            )?,
        };
    }
    Ok(out)
}

/// Pipeline output plus its eight directional derivatives.
///
/// `tangents[k]` is the exact per-pixel derivative of `value` with respect
/// to raw parameter `k` (the unsquashed vector fed to [`squash`]).
#[derive(Debug, Clone)]
pub struct TangentBundle {
    pub value: Image,
    pub tangents: Vec<Image>,
}

impl TangentBundle {
    fn seed(img: &Image) -> Self {
        TangentBundle {
            value: img.clone(),
            tangents: (0..PARAM_COUNT)
                .map(|_| Image::zeros(img.height(), img.width()))
                .collect(),
        }
    }
}

/// Forward-mode pass: squash `raw`, apply the pipeline, and propagate all
/// eight parameter tangents through every operator.
///
/// The value image is computed with the same arithmetic as
/// [`pipeline_apply`] and is bit-identical to it.
pub fn pipeline_jvp(img: &Image, raw: &RawParams, spec: &PipelineSpec) -> Result<TangentBundle> {
    let (params, dsq) = squash(raw);
    let mut bundle = TangentBundle::seed(img);
    for op in spec.order() {
        match op {
            Operator::Exposure => exposure_jvp(&mut bundle, params.a, dsq[0]),
            Operator::Gamma => gamma_jvp(&mut bundle, params.gamma, dsq[1])?,
            Operator::Smoothing => bilateral::bilateral_jvp(
                &mut bundle,
                &params.sigma1,
                &params.sigma2,
                spec.window_half_width(),
                &dsq,
            )?,
        }
    }
    Ok(bundle)
}

fn exposure_jvp(bundle: &mut TangentBundle, a: f64, da_draw: f64) {
    // d(a·v)/draw_k = a·v̇_k + [k = 0]·(da/draw)·v
    for t in bundle.tangents.iter_mut() {
        for s in t.data_mut() {
            *s *= a;
        }
    }
    let value = bundle.value.data_mut();
    let t0 = bundle.tangents[0].data_mut();
    for (td, &v) in t0.iter_mut().zip(value.iter()) {
        *td += da_draw * v;
    }
    for v in value.iter_mut() {
        *v *= a;
    }
}

fn gamma_jvp(bundle: &mut TangentBundle, g: f64, dg_draw: f64) -> Result<()> {
    let n = bundle.value.data().len();
    let mut dfdv = Vec::with_capacity(n);
    let mut dfdg = Vec::with_capacity(n);
    {
        let value = bundle.value.data_mut();
        for v in value.iter_mut() {
            if *v < 0.0 {
                return Err(CoreError::DomainError {
                    what: "gamma operator input",
                    value: *v,
                });
            }
            let m = v.max(GAMMA_EPS);
            let p = math::powf(m, g);
            // the ε-floor gates the input tangent below the floor
            dfdv.push(if *v >= GAMMA_EPS { g * p / m } else { 0.0 });
            dfdg.push(p * math::ln(m));
            *v = p;
        }
    }
    for t in bundle.tangents.iter_mut() {
        for (s, &d) in t.data_mut().iter_mut().zip(dfdv.iter()) {
            *s *= d;
        }
    }
    let t1 = bundle.tangents[1].data_mut();
    for (td, &d) in t1.iter_mut().zip(dfdg.iter()) {
        *td += dg_draw * d;
    }
    Ok(())
}
