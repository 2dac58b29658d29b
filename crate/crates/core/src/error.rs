use thiserror::Error;

use crate::data_model::DataError;
use crate::glm::GlmError;

/// Crate-level error.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Glm(#[from] GlmError),
    #[error("empty estimation view: {0}")]
    EmptyView(String),
    #[error("EM did not converge after {iterations} iterations")]
    EmNotConverged { iterations: usize },
    #[error("non-finite mixture density encountered")]
    NonFiniteDensity,
    #[error("empty donor pool for {0}")]
    EmptyDonorPool(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("estimator not applicable: {0}")]
    NotApplicable(String),
    #[error("too many failed replicates: {failed} of {total}")]
    TooManyFailures { failed: usize, total: usize },
    #[error("calibration failed: {0}")]
    Calibration(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of the numerical machinery rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Glm(GlmError::DimensionMismatch { .. }) => false,
            Error::Glm(_)
            | Error::EmNotConverged { .. }
            | Error::NonFiniteDensity
            | Error::TooManyFailures { .. }
            | Error::Calibration(_) => true,
            _ => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
