use thiserror::Error;

/// Failures raised by the numerical core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("empty domain: the shape contains no interior grid node")]
    EmptyDomain,
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("mask file: {0}")]
    MaskFormat(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("empty cell: the sub-mask has no node")]
    EmptyCell,
    #[error("requested {requested} eigenpairs but the cell has only {available} nodes")]
    TooManyEigenpairs { requested: usize, available: usize },
    #[error("eigensolver did not converge after {iterations} iterations (worst relative residual {worst_residual:e})")]
    EigenNonConvergence {
        iterations: usize,
        worst_residual: f64,
        best_values: Vec<f64>,
        best_residuals: Vec<f64>,
    },
    #[error("spectral cost argument must be positive, got {0:e}")]
    NonPositiveArgument(f64),
    #[error("invalid spectral cost: {0}")]
    InvalidCost(String),
    #[error("frame is not L2-orthonormal (residual {0:e})")]
    NotOrthonormal(f64),
    #[error("frame collapse: fields are linearly dependent in L2")]
    FrameCollapse,
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("non-finite energy encountered at beta = {beta:e}")]
    NonFiniteEnergy { beta: f64 },
    #[error("group extinction: group {group} owns no node of the domain")]
    GroupExtinction { group: usize },
    #[error("cell extinction: cell {cell} is empty after extraction")]
    CellExtinction { cell: usize },
    #[error("eigensolve failed on cell {cell}: {source}")]
    CellEigen {
        cell: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("degenerate sample: H = {h_value:e} at radius {radius:e}")]
    DegenerateSample { radius: f64, h_value: f64 },
    #[error("invalid diagnostic request: {0}")]
    InvalidProbe(String),
}

pub type Result<T> = std::result::Result<T, Error>;
