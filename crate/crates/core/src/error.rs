//! Error type shared by the core modules.

use alloc::string::String;
use alloc::vec::Vec;

/// Errors surfaced by tensor ops, model construction, and the samplers.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Incompatible shapes; carries both offending shapes.
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    /// A value argument was outside its documented domain.
    InvalidArgument { op: &'static str, msg: String },
    /// A forward op produced NaN/Inf while debug checks were enabled,
    /// or a training step observed a non-finite loss.
    NonFinite { op: &'static str },
    /// The gradient tape was consumed twice or used inconsistently.
    TapeConsumed,
    /// A LoRA target pattern matched no modules; lists what exists.
    NoMatchingModules {
        pattern: String,
        available: Vec<String>,
    },
    /// Two adapters were applied to overlapping module sets.
    OverlappingAdapters { module: String },
    /// Checkpoint contents disagree with the requested spec.
    AdapterMismatch { msg: String },
}

impl core::fmt::Display for Error {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Error::ShapeMismatch { op, lhs, rhs } => {
                write!(f, "{op}: shape mismatch between {lhs:?} and {rhs:?}")
            }
            Error::InvalidArgument { op, msg } => write!(f, "{op}: {msg}"),
            Error::NonFinite { op } => write!(f, "{op}: non-finite value produced"),
            Error::TapeConsumed => write!(f, "gradient tape already consumed by backward"),
            Error::NoMatchingModules { pattern, available } => write!(
                f,
                "target pattern {pattern:?} matched no modules; available: {available:?}"
            ),
            Error::OverlappingAdapters { module } => {
                write!(f, "adapters overlap on module {module:?}")
            }
            Error::AdapterMismatch { msg } => write!(f, "adapter mismatch: {msg}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn invalid(op: &'static str, msg: impl core::fmt::Display) -> Error {
    Error::InvalidArgument {
        op,
        msg: alloc::format!("{msg}"),
    }
}
