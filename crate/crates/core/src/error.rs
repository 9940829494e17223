use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParams(String),

    #[error("index {index} out of range, expected 0..={max}")]
    IndexOutOfRange { index: usize, max: usize },

    #[error("point {0} is not on the reference lattice")]
    NotOnLattice(String),

    #[error("order {order} exceeds the hierarchy depth {max_order}")]
    OrderTooLarge { order: u32, max_order: u32 },

    #[error("order {0} has already been refined")]
    AlreadyRefined(u32),

    #[error("box {0} is not contained in the unit cube")]
    OutsideUnitCube(String),

    #[error("box is not aligned to the grid: {0}")]
    GridMisaligned(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("lipschitz projection did not converge: constant {achieved} exceeds budget {budget}")]
    ProjectionFailed { achieved: f64, budget: f64 },

    #[error("solver diverged at iteration {iteration}")]
    Diverged { iteration: usize },

    #[error("no rectangle with property 1 among {} classified rectangles", verdicts.len())]
    NoGoodRectangle {
        verdicts: Vec<crate::dichotomy::PropertyVerdict>,
    },

    #[error("good-pair verification failed: measured {measured:.3e} > bound {bound:.3e}")]
    GoodPairRejected { measured: f64, bound: f64 },

    #[error("unknown {kind} `{name}`; available: {available}")]
    UnknownName {
        kind: &'static str,
        name: String,
        available: String,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
