use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("covariate covariance matrix is singular or numerically degenerate")]
    DegenerateCovariates,

    #[error("quantile indicator covariance is singular: {0}")]
    DegenerateIndicator(String),

    #[error("estimated density {value:e} for the {arm} arm is below the floor {floor:e}")]
    DegenerateDensity {
        arm: &'static str,
        value: f64,
        floor: f64,
    },

    #[error("rerandomization gave up after {attempts} attempts; the acceptance threshold is too strict for these covariates")]
    RejectionBudgetExhausted { attempts: u64 },

    #[error("malformed input: {0}")]
    MalformedInput(String),

    #[error("noise calibration failed: {0}")]
    CalibrationFailed(String),

    #[error("{context}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Coarse grouping used to pick process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad arguments, unreadable or malformed files.
    Input,
    /// The data are valid but the requested quantity is numerically degenerate.
    Numerical,
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub fn malformed(msg: impl Into<String>) -> Self {
        Error::MalformedInput(msg.into())
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidParameter(_) | Error::MalformedInput(_) | Error::Io(_) => {
                ErrorClass::Input
            }
            Error::DegenerateCovariates
            | Error::DegenerateIndicator(_)
            | Error::DegenerateDensity { .. }
            | Error::RejectionBudgetExhausted { .. }
            | Error::CalibrationFailed(_) => ErrorClass::Numerical,
            Error::Context { source, .. } => source.class(),
        }
    }
}

impl From<csv::Error> for Error {
    fn from(err: csv::Error) -> Self {
        match err.into_kind() {
            csv::ErrorKind::Io(e) => Error::Io(e),
            other => Error::MalformedInput(format!("{other:?}")),
        }
    }
}
