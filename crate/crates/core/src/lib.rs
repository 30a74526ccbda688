//! Differentiable low-light image enhancement.
//!
//! This crate implements a small image signal processing (ISP) chain —
//! exposure gain, gamma, and an edge-preserving bilateral smoother — whose
//! eight hyperparameters can be tuned per image by gradient descent against
//! a frozen downstream loss. The pieces:
//!
//! - [`Image`]: a linear-light `H×W×3` raster of `f64` samples.
//! - [`pipeline`]: the three operators, their composition in a configurable
//!   order, and exact forward-mode directional derivatives with respect to
//!   the eight raw parameters ([`pipeline::pipeline_jvp`]).
//! - [`params`]: bounded parameter ranges and the log-space sigmoid squash
//!   mapping unbounded predictor outputs into them.
//! - [`predictor`]: a six-layer fully convolutional network predicting the
//!   raw parameters from an image crop, with reverse-mode backprop and an
//!   [`adam`] optimizer.
//! - [`tasks`]: frozen differentiable losses (reference MSE, feature MSE
//!   through a fixed random conv stack, blob-heatmap MSE) that supply the
//!   training signal.
//! - [`degrade`]: synthetic low-light pair generation (attenuation, read
//!   noise, quantization) and severity-tier calibration.
//! - [`grid`]: an exhaustive per-image parameter search used as an oracle
//!   upper bound.
//!
//! The crate is `no_std`-compatible (requires `alloc`); the default `std`
//! feature only switches float math from `libm` to the platform intrinsics.
//! All operations are pure functions of their inputs: randomness is always
//! derived from an explicit seed via the documented [`rng::SplitMix64`]
//! generator, so results replay bit-for-bit.

#![cfg_attr(not(feature = "std"), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod adam;
pub mod bilateral;
pub mod degrade;
pub mod error;
pub mod grid;
pub mod image;
pub mod math;
pub mod params;
pub mod pipeline;
pub mod predictor;
pub mod rng;
pub mod tasks;

pub use error::{CoreError, Result};
pub use image::Image;
pub use params::{squash, LLEParams, RawParams, PARAM_COUNT};
pub use pipeline::{pipeline_apply, pipeline_jvp, Operator, PipelineSpec, TangentBundle};
