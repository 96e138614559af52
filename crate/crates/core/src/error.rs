use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("weight {weight} at atom {index} is negative")]
    NegativeWeight { index: usize, weight: f64 },

    #[error("weights sum to {sum}, expected 1 within 1e-12")]
    WeightSumDeviation { sum: f64 },

    #[error("atom {index} lies outside the bounding box")]
    PointOutsideBox { index: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("measures do not share the same support list")]
    SupportMismatch,

    #[error("measure has zero total mass")]
    ZeroMass,

    #[error("invalid bounding box: {0}")]
    InvalidBox(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("kernel is not differentiable at the requested point")]
    NonDifferentiablePoint,

    #[error("discrepancy {value:e} is too small for the witness to be defined")]
    ZeroDiscrepancy { value: f64 },

    #[error("problem of size {rows}x{cols} exceeds the exact solver cap")]
    SizeExceeded { rows: usize, cols: usize },

    #[error("{term}: Sinkhorn did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged {
        term: String,
        iterations: usize,
        residual: f64,
    },

    #[error("cost is not of the form c = -K")]
    NotNegatedKernel,

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
