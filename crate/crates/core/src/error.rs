use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is not positive semi-definite (min eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("invalid order parameter: {0}")]
    InvalidCdf(String),

    #[error("invalid matrix path: {0}")]
    InvalidPath(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid base measure: {0}")]
    InvalidMeasure(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("covariance increment at level {level} is not PSD (min eigenvalue {min_eigenvalue:e})")]
    NonPsdIncrement { level: usize, min_eigenvalue: f64 },

    #[error("point {point:?} lies outside the grid box minus the stencil margin")]
    OutOfDomain { point: Vec<f64> },

    #[error("no convergence after {iterations} iterations (projected gradient norm {grad_norm:e})")]
    NotConverged { iterations: usize, grad_norm: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::NotPsd { .. } => "not_psd",
            Error::InvalidCdf(_) => "invalid_cdf",
            Error::InvalidPath(_) => "invalid_path",
            Error::InvalidModel(_) => "invalid_model",
            Error::InvalidMeasure(_) => "invalid_measure",
            Error::InvalidGrid(_) => "invalid_grid",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::NonPsdIncrement { .. } => "non_psd_increment",
            Error::OutOfDomain { .. } => "out_of_domain",
            Error::NotConverged { .. } => "not_converged",
            Error::Numerical(_) => "numerical",
        }
    }

    /// Numerical failures as opposed to rejected inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonPsdIncrement { .. } | Error::NotConverged { .. } | Error::Numerical(_)
        )
    }
}
