//! Error type shared across the crate.

use alloc::string::String;
use core::fmt;

/// Errors produced by pipeline, predictor, and dataset-math operations.
#[derive(Debug, Clone, PartialEq)]
#[non_exhaustive]
pub enum CoreError {
    /// Tensor or image dimensions do not line up.
    ShapeMismatch {
        what: &'static str,
        expected: String,
        actual: String,
    },
    /// A parameter lies outside its allowed range or is non-finite.
    InvalidParam {
        name: &'static str,
        value: f64,
        min: f64,
        max: f64,
    },
    /// An input sample violates an operator's domain (e.g. negative pixel
    /// fed to the gamma operator — always an upstream bug).
    DomainError { what: &'static str, value: f64 },
    /// A gradient tensor contains NaN or infinity.
    NonFiniteGradient { tensor: String },
    /// A backward pass was handed a cache that does not match the model.
    CacheMismatch { reason: &'static str },
    /// A calibration target cannot be met; reports the reachable range.
    TargetUnreachable {
        target: f64,
        achievable_min: f64,
        achievable_max: f64,
    },
    /// Malformed configuration (empty pipeline, duplicate operators, ...).
    InvalidConfig { message: String },
    /// Frozen task assets were mutated after their digest was recorded.
    DigestMismatch { recorded: u64, actual: u64 },
}

impl fmt::Display for CoreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoreError::ShapeMismatch {
                what,
                expected,
                actual,
            } => write!(f, "shape mismatch in {what}: expected {expected}, got {actual}"),
            CoreError::InvalidParam {
                name,
                value,
                min,
                max,
            } => write!(f, "parameter {name} = {value} outside [{min}, {max}]"),
            CoreError::DomainError { what, value } => {
                write!(f, "domain error in {what}: offending value {value}")
            }
            CoreError::NonFiniteGradient { tensor } => {
                write!(f, "non-finite gradient in tensor {tensor}")
            }
            CoreError::CacheMismatch { reason } => {
                write!(f, "forward cache does not match model: {reason}")
            }
            CoreError::TargetUnreachable {
                target,
                achievable_min,
                achievable_max,
            } => write!(
                f,
                "target {target} unreachable; achievable range is ({achievable_min}, {achievable_max}]"
            ),
            CoreError::InvalidConfig { message } => write!(f, "invalid configuration: {message}"),
            CoreError::DigestMismatch { recorded, actual } => write!(
                f,
                "frozen asset digest mismatch: recorded {recorded:#018x}, actual {actual:#018x}"
            ),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for CoreError {}

pub type Result<T> = core::result::Result<T, CoreError>;
