//! Error type shared by every module in the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, RdmError>;

#[derive(Debug, Error)]
pub enum RdmError {
    /// A polar grid that cannot be constructed or does not match its image.
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite values in {0}")]
    NonFinite(&'static str),

    /// Pupil with no transmission cannot produce a PSF.
    #[error("degenerate pupil: no transmission inside the aperture")]
    DegeneratePupil,

    /// Patch that is identically zero after background subtraction.
    #[error("degenerate patch: all zero after background subtraction")]
    DegeneratePatch,

    #[error("no point sources detected in the calibration image")]
    EmptyCalibration,

    /// Iterative solve whose loss became non-finite.
    #[error("solver diverged at iteration {iteration}")]
    Divergence { iteration: usize },

    /// Coefficient fit whose loss became non-finite; the partial report is kept
    /// for inspection.
    #[error("coefficient fit diverged at iteration {iteration}")]
    FitDiverged {
        iteration: usize,
        loss_trace: Vec<f64>,
    },

    /// Blind deblurring on an image with no gradient content.
    #[error("input image carries no gradient information")]
    UninformativeInput,

    /// Brute-force superposition refused for large images unless overridden.
    #[error("image side {n} exceeds the superposition guard ({limit}); set allow_large to override")]
    GuardExceeded { n: usize, limit: usize },

    #[error("unsupported image format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl RdmError {
    /// Process exit class: 1 for user/input errors, 2 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            RdmError::InvalidGrid(_)
            | RdmError::InvalidArgument(_)
            | RdmError::GuardExceeded { .. }
            | RdmError::Format(_)
            | RdmError::Io(_)
            | RdmError::Json(_) => 1,
            RdmError::NonFinite(_)
            | RdmError::DegeneratePupil
            | RdmError::DegeneratePatch
            | RdmError::EmptyCalibration
            | RdmError::Divergence { .. }
            | RdmError::FitDiverged { .. }
            | RdmError::UninformativeInput => 2,
        }
    }
}
