use thiserror::Error;

/// Errors raised by the labeling pipeline and its building blocks.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid point cloud: {0}")]
    InvalidCloud(String),

    #[error("missing attribute: {0} required by the enabled cost measures")]
    MissingAttribute(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("point cloud has {size} points but k = {k}")]
    NotEnoughPoints { size: usize, k: usize },

    #[error("kernel {axis} {index} underflowed to zero; epsilon = {epsilon} is too small for the cost scale")]
    KernelUnderflow {
        axis: &'static str,
        index: usize,
        epsilon: f64,
    },

    #[error("non-finite sinkhorn scaling vector after {iteration} iterations (epsilon = {epsilon})")]
    NonFiniteScaling { iteration: usize, epsilon: f64 },

    #[error("row {0} of the transport plan sums to zero")]
    ZeroRowSum(usize),

    #[error("correspondence index {index} out of range for target of size {size}")]
    IndexOutOfRange { index: usize, size: usize },

    #[error("node {0} is isolated: off-diagonal affinity sums to zero")]
    IsolatedNode(usize),

    #[error("singular linear system")]
    Singular,

    #[error("cost matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("oracle limited to n <= {limit}, got {n}")]
    OracleTooLarge { n: usize, limit: usize },

    #[error("empty evaluation set")]
    EmptyEvaluation,

    #[error("degenerate scene spec: {0}")]
    DegenerateScene(String),

    #[error("{0}")]
    Format(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
