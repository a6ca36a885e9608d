use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("{op}: iteration did not converge ({detail})")]
    NonConvergence { op: &'static str, detail: String },
    #[error("{op}: speed bound exceeded ({detail})")]
    SpeedBoundExceeded { op: &'static str, detail: String },
    #[error("{op}: time {t} exceeds the admissible horizon {horizon}")]
    HorizonExceeded { op: &'static str, t: f64, horizon: f64 },
    #[error("{op}: sequence not Cauchy, last gap {gap} > {tol}")]
    NotCauchy { op: &'static str, gap: f64, tol: f64 },
    #[error("{op}: hypothesis violated ({detail})")]
    HypothesisViolated { op: &'static str, detail: String },
    #[error("{op}: input is not a weak KAM solution (residual {residual})")]
    NotWeakKam { op: &'static str, residual: f64 },
    #[error("{op}: precondition failed ({detail})")]
    PreconditionFailed { op: &'static str, detail: String },
    #[error("{op}: no admissible samples ({detail})")]
    InsufficientSamples { op: &'static str, detail: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub fn nonconv(op: &'static str, detail: impl Into<String>) -> Self {
        Error::NonConvergence { op, detail: detail.into() }
    }

    pub fn precondition(op: &'static str, detail: impl Into<String>) -> Self {
        Error::PreconditionFailed { op, detail: detail.into() }
    }

    /// True for numerical failures (as opposed to invalid requests).
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonConvergence { .. } | Error::NotCauchy { .. })
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
