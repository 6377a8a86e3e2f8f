use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {context} (expected {expected}, got {got})")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    // hermite
    #[error("quadrature did not converge: estimated error {achieved:e} > tolerance {tol:e}")]
    QuadratureNotConverged { achieved: f64, tol: f64 },

    #[error("activation does not decay against the Gaussian weight (|σ(x)|φ(x) = {value:e} at x = {at})")]
    UnboundedActivation { at: f64, value: f64 },

    #[error("negative tail mass {value:e} at ell = {ell} (profile is inconsistent)")]
    NegativeTail { ell: usize, value: f64 },

    // dataset
    #[error("degenerate Gaussian draw for column {column} after retries")]
    DegenerateDraw { column: usize },

    #[error("parse error in {path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("sample at row {row} has zero norm and cannot be normalized")]
    ZeroNormSample { row: usize },

    #[error("column {column} does not have unit norm (norm = {norm})")]
    NotUnitNorm { column: usize, norm: f64 },

    #[error("maximal angle eps_n = {eps_n} exceeds 1/sqrt(2)")]
    AngleTooLarge { eps_n: f64 },

    #[error("no ell <= {l_max} satisfies the near-orthogonality condition")]
    NoAdmissibleEll { l_max: usize },

    // kernel
    #[error("kernel series does not converge: {0}")]
    TailNotConvergent(String),

    #[error("matrix is not positive definite (smallest eigenvalue {min_eig:e})")]
    NotPositiveDefinite { min_eig: f64 },

    #[error("invalid kernel cache: {0}")]
    BadCache(String),

    // ridge
    #[error("singular system: smallest eigenvalue {min_eig:e} with ridge {lambda}")]
    SingularSystem { min_eig: f64, lambda: f64 },

    #[error("zero diagonal entry in the inverse at index {index}")]
    ZeroDiagonal { index: usize },

    #[error("GCV is undefined at lambda = 0")]
    LambdaZero,

    // experiment
    #[error("not enough data to fit a slope: {0}")]
    InsufficientData(String),

    #[error("consistency check failed: {0}")]
    ConsistencyCheck(String),

    #[error("{coords}: {source}")]
    AtCell {
        coords: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Wraps `self` with sweep coordinates.
    pub fn at(self, coords: impl Into<String>) -> Error {
        Error::AtCell {
            coords: coords.into(),
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
