use thiserror::Error;

/// Broad category of a failure, used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Malformed or inconsistent input data.
    Data,
    /// A model or configuration that cannot be fitted as specified.
    Model,
    /// A numerical failure during estimation.
    Numeric,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid weights{}: {reason}", unit.as_ref().map(|u| format!(" for unit {u}")).unwrap_or_default())]
    InvalidWeights { unit: Option<String>, reason: String },

    #[error("invalid distance {distance} for unit {unit}")]
    InvalidDistance { unit: String, distance: f64 },

    #[error("area {area} has no neighbours")]
    IsolatedArea { area: String },

    #[error("unknown label {label} in {context}")]
    UnknownLabel { label: String, context: String },

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Dimension {
        context: String,
        expected: usize,
        found: usize,
    },

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("cannot draw {m} distinct clusters from {clusters} in classification {classification}")]
    InfeasibleCardinality {
        classification: String,
        m: usize,
        clusters: usize,
    },

    #[error("fixed-effects design is rank deficient")]
    SingularDesign,

    #[error("marginal covariance is not positive definite")]
    NotPositiveDefinite,

    #[error("sampler state became non-finite at iteration {iteration} of chain {chain}")]
    Divergence { chain: usize, iteration: usize },

    #[error("optimizer did not converge after {iterations} iterations (last log-likelihood {last_loglik})")]
    Convergence {
        iterations: usize,
        last_loglik: f64,
        trace: Vec<f64>,
    },

    #[error("problem too large for dense evaluation: n = {n} exceeds {limit}")]
    TooLarge { n: usize, limit: usize },
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidWeights { .. }
            | Error::InvalidDistance { .. }
            | Error::IsolatedArea { .. }
            | Error::UnknownLabel { .. }
            | Error::InvalidData(_) => ErrorKind::Data,
            Error::Dimension { .. }
            | Error::InvalidModel(_)
            | Error::InvalidConfig(_)
            | Error::InfeasibleCardinality { .. }
            | Error::SingularDesign
            | Error::TooLarge { .. } => ErrorKind::Model,
            Error::NotPositiveDefinite | Error::Divergence { .. } | Error::Convergence { .. } => {
                ErrorKind::Numeric
            }
        }
    }

    pub(crate) fn dimension(context: impl Into<String>, expected: usize, found: usize) -> Self {
        Error::Dimension {
            context: context.into(),
            expected,
            found,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
