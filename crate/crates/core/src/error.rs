//! Error type shared by all core modules.

use alloc::string::String;

/// Errors produced by feature extraction, metrics, the tensor engine and
/// training.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Tensor or matrix shapes are incompatible for the requested operation.
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    /// A numeric precondition was violated (non-positive std, bad stride, ...).
    #[error("invalid argument to {op}: {detail}")]
    InvalidArgument { op: &'static str, detail: String },

    /// Silence removal left no frames to compare.
    #[error("all frames silent")]
    AllFramesSilent,

    /// Not enough frames survive for the requested segmentation.
    #[error("too few frames: {got} available, {needed} needed")]
    TooFewFrames { got: usize, needed: usize },

    /// A row had zero norm after mean removal (strict normalization only).
    #[error("degenerate row {index}: zero norm after centering")]
    DegenerateRow { index: usize },

    /// A column had zero norm after mean removal (strict normalization only).
    #[error("degenerate column {index}: zero norm after centering")]
    DegenerateColumn { index: usize },

    /// The training sample has fewer active frames than the configured
    /// minimum; the caller is expected to discard it.
    #[error("sample rejected: {kept} active frames, minimum {min_active}")]
    SampleRejected { kept: usize, min_active: usize },

    /// A computation produced NaN or infinity where a finite value is required.
    #[error("non-finite value in {op}")]
    NonFinite { op: &'static str },

    /// A training step produced a non-finite loss for the named sample.
    #[error("non-finite loss for sample {sample}")]
    NonFiniteLoss { sample: String },
}

pub type Result<T> = core::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn invalid(op: &'static str, detail: impl Into<String>) -> Self {
        Error::InvalidArgument {
            op,
            detail: detail.into(),
        }
    }
}
