use thiserror::Error;

use crate::forcebasis::BasisModel;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("integration diverged at step {step}: radius {radius:e} below singularity floor")]
    IntegrationDiverged { step: usize, radius: f64 },

    #[error("radius {radius:e} below singularity floor {floor:e}")]
    Singularity { radius: f64, floor: f64 },

    #[error("series too short: got {len} samples, need at least {required}")]
    TooShort { len: usize, required: usize },

    #[error("non-finite evaluation: {0}")]
    Evaluation(String),

    /// Training produced a non-finite loss or gradient. Carries the last
    /// parameters that evaluated cleanly.
    #[error("training unstable at epoch {epoch}, batch {batch}: {reason}")]
    Instability {
        epoch: usize,
        batch: usize,
        reason: String,
        last_good: Box<BasisModel>,
    },

    #[error("degenerate calibration: basis {basis} has vanishing norm {norm:e}")]
    DegenerateCalibration { basis: usize, norm: f64 },

    #[error("period estimation failed: {0}")]
    PeriodEstimation(String),

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("ill-conditioned least squares on active terms {terms:?}")]
    IllConditioned { terms: Vec<usize> },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Errors caused by bad input rather than by a failed computation.
    pub fn is_usage(&self) -> bool {
        matches!(self, Error::Config(_))
    }
}
