use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("block sizes must be non-increasing: m[{index}] = {larger} follows m[{}] = {smaller}", index - 1)]
    NonMonotoneBlocks {
        index: usize,
        smaller: usize,
        larger: usize,
    },
    #[error("superdiagonal block B_{block} has numerical rank {rank}, expected full column rank {expected}")]
    RankDeficientSuperdiagonal {
        block: usize,
        rank: usize,
        expected: usize,
    },
    #[error("entry b[{row}][{col}] = {value:e} lies in a structurally zero block")]
    NonzeroForbiddenBlock { row: usize, col: usize, value: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite input: {0}")]
    NonFiniteInput(String),
    #[error("scale must be positive, got {0}")]
    NonpositiveScale(f64),
    #[error("time must be positive, got {0}")]
    NonpositiveTime(f64),
    #[error("fit failed: {0}")]
    FitFailed(String),
    #[error("quadrature did not converge: {0}")]
    QuadratureNotConverged(String),
    #[error("grid too coarse: {0}")]
    GridTooCoarse(String),
    #[error("homogeneous dimension Q = {0} must exceed 2")]
    HomogeneousDimensionTooSmall(usize),
    #[error("CFL violation: {0}")]
    CflViolation(String),
    #[error("ellipticity violation: {0}")]
    EllipticityViolation(String),
    #[error("non-finite value at step {step}")]
    NonfiniteValue { step: usize },
    #[error("ball outside grid: {0}")]
    BallOutsideGrid(String),
    #[error("negative value {value:e} at node {node}")]
    NegativeValues { node: usize, value: f64 },
    #[error("oscillation {0:e} at the top level is below 1e-12; exponent undefined")]
    DegenerateOscillation(f64),
    #[error("matrix is singular or not positive definite")]
    Singular,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("malformed data: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
