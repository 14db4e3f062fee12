use thiserror::Error;

/// Errors produced across the allocation engine.
///
/// Variants split into input-validation failures and numerical failures;
/// [`Error::is_numerical`] tells them apart (the CLI maps them to distinct
/// exit codes).
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("matrix is not square: {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("matrix is not symmetric: |a[{i},{j}] - a[{j},{i}]| = {diff:e}")]
    NotSymmetric { i: usize, j: usize, diff: f64 },

    #[error("non-finite input value")]
    NonFiniteInput,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("expected {expected} labels, got {got}")]
    LabelMismatch { expected: usize, got: usize },

    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),

    #[error("rho = {rho} outside the positive-definite range for dimension {dim}")]
    InvalidRho { rho: f64, dim: usize },

    #[error("matrix is not positive semidefinite (pivot {pivot:e} at {index})")]
    NotPsd { index: usize, pivot: f64 },

    #[error("asset {0} has non-positive variance")]
    ZeroVariance(usize),

    #[error("xi = {0} outside [0, 1]")]
    XiOutOfRange(f64),

    #[error("gamma = {0} outside [0, 1]")]
    GammaOutOfRange(f64),

    #[error("invalid grid step {0}")]
    InvalidGridStep(f64),

    #[error("no positive weight to renormalize")]
    AllNonPositive,

    #[error("split index {k} invalid for dimension {n}")]
    BadIndex { k: usize, n: usize },

    #[error("singular or ill-conditioned matrix (rcond estimate {rcond:e})")]
    Singular { rcond: f64 },

    #[error("sum of inverse-covariance entries is numerically zero")]
    ZeroNormalizer,

    #[error("degenerate constraint: b'Q^-1 b is numerically zero")]
    DegenerateConstraint,

    #[error("b-vector entry {value:e} at {index} below floor {floor:e}")]
    DegenerateBVector { index: usize, value: f64, floor: f64 },

    #[error("child weights are required for subportfolio variance")]
    MissingChildWeights,

    #[error("no grid point produced a feasible shrinkage")]
    NoFeasibleXi,

    #[error("empty result")]
    EmptyResult,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotPsd { .. }
                | Error::Singular { .. }
                | Error::ZeroNormalizer
                | Error::DegenerateConstraint
                | Error::DegenerateBVector { .. }
                | Error::NoFeasibleXi
                | Error::AllNonPositive
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
