use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("unsupported dimension {0} (must be 1, 2 or 3)")]
    UnsupportedDimension(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("region is empty: {0}")]
    EmptyRegion(String),

    #[error("coincident points for singular kernel: x[{row}] and y[{col}]")]
    CoincidentPoints { row: usize, col: usize },

    #[error("matrix contains non-finite entries")]
    NonFinite,

    #[error("point {index} lies outside the source box")]
    OutsideSource { index: usize },

    #[error("proxy selection saturated after {rounds} rounds (rank {rank} = min(|X_d|, |Y_d|)); use denser grids or adaptive candidates")]
    Saturated { rounds: usize, rank: usize },

    #[error("singular kernel on a weakly admissible pair without a gap: no separable expansion exists")]
    SingularWeakPair,

    #[error("refused: {0}")]
    Refused(String),

    #[error("tree depth limit of {0} exceeded (coincident points?)")]
    DepthExceeded(usize),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
