//! Error type shared across the crate.

use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// An op received inputs whose shapes do not conform to its shape rule.
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    /// `backward` was asked to differentiate a non-scalar output.
    NonScalarOutput { shape: Vec<usize> },
    /// A tensor without a tape handle was used where a tracked one is required.
    DetachedTensor,
    /// A function produced a non-finite value where a finite one is required.
    NonFinite { context: String },
    /// Matrix inverse requested at a point where |det| < 1e-12.
    SingularJacobian { det: f64 },
    /// Grid extents unusable for the requested operation.
    BadGrid { context: String },
    /// DFT input extents must be powers of two, each >= 2.
    NotPowerOfTwo { extents: Vec<usize> },
    /// A resampled frequency would land at or above Nyquist.
    NyquistViolation { freq: f64, nyquist: f64 },
    /// Image file could not be loaded.
    ImageLoad { path: String, reason: String },
    /// Zero-level-set extraction found no crossings.
    NoZeroCrossing { side: &'static str },
    /// Training aborted on a non-finite loss.
    TrainingDiverged {
        step: usize,
        loss: f64,
        max_grad: f64,
    },
    /// Configuration rejected by validation.
    InvalidConfig { reason: String },
    Io { context: String },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch { op, lhs, rhs } => {
                write!(f, "shape mismatch in `{op}`: {lhs:?} vs {rhs:?}")
            }
            Error::NonScalarOutput { shape } => {
                write!(f, "backward requires a scalar output, got shape {shape:?}")
            }
            Error::DetachedTensor => write!(f, "tensor is not attached to the active tape"),
            Error::NonFinite { context } => write!(f, "non-finite value in {context}"),
            Error::SingularJacobian { det } => {
                write!(f, "jacobian is singular (|det| = {det:.3e} < 1e-12)")
            }
            Error::BadGrid { context } => write!(f, "degenerate grid: {context}"),
            Error::NotPowerOfTwo { extents } => {
                write!(f, "dft2 requires power-of-two extents >= 2, got {extents:?}")
            }
            Error::NyquistViolation { freq, nyquist } => {
                write!(
                    f,
                    "resampled frequency {freq} exceeds the Nyquist limit {nyquist}"
                )
            }
            Error::ImageLoad { path, reason } => write!(f, "cannot load `{path}`: {reason}"),
            Error::NoZeroCrossing { side } => {
                write!(f, "no zero crossing found in the {side} field")
            }
            Error::TrainingDiverged {
                step,
                loss,
                max_grad,
            } => write!(
                f,
                "non-finite loss at step {step} (loss = {loss}, max |grad| = {max_grad})"
            ),
            Error::InvalidConfig { reason } => write!(f, "invalid config: {reason}"),
            Error::Io { context } => write!(f, "io error: {context}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io {
            context: e.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
