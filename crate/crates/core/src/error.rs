use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("normal matrix is singular or ill-conditioned (condition number {condition:.3e})")]
    SingularNormalMatrix { condition: f64 },
    #[error("dimension mismatch: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("weights must be strictly positive and finite, found {0}")]
    NonPositiveWeight(f64),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("{what}: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        what: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid eigenvalue bounds: gamma_min = {gamma_min} exceeds gamma_max = {gamma_max}")]
    InvalidBounds { gamma_max: f64, gamma_min: f64 },
    #[error("true parameters have zero norm; relative error is undefined")]
    ZeroTruth,
    #[error("malformed trace: {0}")]
    Trace(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

impl Error {
    /// Configuration problems (as opposed to numerical failures).
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::InvalidConfig(_) | Error::Toml(_) | Error::InvalidBounds { .. }
        )
    }

    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Linalg(_) | Error::ZeroTruth)
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
