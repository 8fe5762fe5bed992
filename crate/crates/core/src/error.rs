use thiserror::Error;

use crate::calibration::CalibrationError;
use crate::discrimination::DiscriminationError;
use crate::glm::GlmError;
use crate::ingest::IngestError;
use crate::longitudinal::LongitudinalError;
use crate::model::ModelError;
use crate::robustness::RobustnessError;
use crate::simulate::SimError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Longitudinal(#[from] LongitudinalError),
    #[error(transparent)]
    Glm(#[from] GlmError),
    #[error(transparent)]
    Discrimination(#[from] DiscriminationError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error(transparent)]
    Robustness(#[from] RobustnessError),
    #[error(transparent)]
    Simulation(#[from] SimError),
    #[error("invariant violated: {0}")]
    Invariant(String),
}

/// Broad failure classes, used to pick process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad or inconsistent input files and arguments.
    Input,
    /// Valid input on which a statistic is undefined (no cases, separation, ...).
    Degenerate,
    Internal,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Ingest(IngestError::Summary { .. }) => ErrorClass::Degenerate,
            Error::Model(_) | Error::Ingest(_) | Error::Simulation(_) => ErrorClass::Input,
            Error::Longitudinal(LongitudinalError::InvalidComponents(_)) => ErrorClass::Input,
            Error::Longitudinal(_) => ErrorClass::Degenerate,
            Error::Glm(GlmError::InvalidInput(_)) => ErrorClass::Internal,
            Error::Glm(_) => ErrorClass::Degenerate,
            Error::Discrimination(DiscriminationError::InvalidInput(_)) => ErrorClass::Internal,
            Error::Discrimination(_) => ErrorClass::Degenerate,
            Error::Calibration(CalibrationError::Model(_)) => ErrorClass::Input,
            Error::Calibration(CalibrationError::InvalidInput(_)) => ErrorClass::Internal,
            Error::Calibration(CalibrationError::Glm(GlmError::InvalidInput(_))) => ErrorClass::Internal,
            Error::Calibration(_) => ErrorClass::Degenerate,
            Error::Robustness(RobustnessError::InvalidArgument(_)) => ErrorClass::Input,
            Error::Robustness(_) => ErrorClass::Degenerate,
            Error::Invariant(_) => ErrorClass::Internal,
        }
    }
}
