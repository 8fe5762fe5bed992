//! External validation toolkit for binary logistic risk-prediction models.
//!
//! The pipeline reads a cohort, normalizes and summarizes its predictors,
//! scores every subject with a fixed [`model::ModelSpec`], and reports
//! discrimination (ROC/AUC with DeLong intervals) and calibration
//! (expected/observed ratios, calibration intercept and slope, decile
//! curves). Models can be recalibrated by shifting only their intercept,
//! and [`robustness`] checks that shift with repeated stratified holdouts.
//! [`simulate`] generates cohorts with known ground truth.

pub mod calibration;
pub mod discrimination;
pub mod error;
pub mod glm;
pub mod ingest;
pub mod longitudinal;
pub mod model;
pub mod report;
pub mod robustness;
pub mod simulate;
pub mod stats;
pub mod summary;

pub use error::Error;

/// Version string recorded in reports.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
