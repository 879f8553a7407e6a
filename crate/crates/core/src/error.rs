use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid bounds: {0}")]
    InvalidBounds(String),
    #[error("hyperbolic domain must lie in x_n > 0 (lower bound {0})")]
    InvalidHalfPlane(f64),
    #[error("domain has no interior node")]
    EmptyDomain,
    #[error("point {0:?} lies outside the model domain")]
    OutOfDomain(Vec<f64>),
    #[error("origin {0:?} lies inside the closed domain")]
    OriginInsideDomain(Vec<f64>),
    #[error("tensor is not positive definite at {point:?} (smallest eigenvalue {min_eigenvalue:e})")]
    NotPositiveDefinite { point: Vec<f64>, min_eigenvalue: f64 },
    #[error("tensor is not symmetric at {0:?}")]
    NotSymmetric(Vec<f64>),
    #[error("derivatives unavailable: {0}")]
    DerivativeUnavailable(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite value at {0:?}")]
    NonFiniteValue(Vec<f64>),
    #[error("eigensolver did not converge after {iterations} iterations (residuals {residuals:?})")]
    ConvergenceFailure { iterations: usize, residuals: Vec<f64> },
    #[error("cannot compute {requested} eigenpairs of a {available}-dimensional pencil")]
    DimensionError { requested: usize, available: usize },
    #[error("matrix is not positive definite ({0})")]
    FactorizationFailed(String),
    #[error("invalid instance: {0}")]
    InvalidInstance(String),
    #[error("nonpositive radicand in {what}: {value:e}")]
    NonpositiveRadicand { what: String, value: f64 },
    #[error("nonpositive upsilon_1: {0:e}")]
    NonpositiveUpsilon(f64),
    #[error("spectrum has {available} eigenvalues, {required} required")]
    InsufficientSpectrum { required: usize, available: usize },
    #[error("|grad f|_g = {value} at {point:?}, expected 1")]
    UnitGradientViolation { point: Vec<f64>, value: f64 },
    #[error("degenerate gap: lambda_{k1} and lambda_{k2} belong to one multiplet")]
    DegenerateGap { k1: usize, k2: usize },
    #[error("hypothesis violated: {0}")]
    HypothesisViolated(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
