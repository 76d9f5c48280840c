use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("dimension {0} is not supported here")]
    UnsupportedDimension(usize),
    #[error("empty set where a nonempty one is required")]
    EmptySet,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("consecutive vertices {0} and {1} are not lattice neighbours")]
    NotNearestNeighbour(String, String),
    #[error("point {0} does not belong to the set")]
    NotInSet(String),
    #[error("linear solve residual {residual:e} exceeds tolerance {tolerance:e}")]
    IllConditioned { residual: f64, tolerance: f64 },
    #[error("escape value {value} at {site} outside [0,1]")]
    EscapeOutOfRange { site: String, value: f64 },
    #[error("set of size {size} exceeds the solver cap {cap}")]
    SolverCap { size: usize, cap: usize },
    #[error("iterative solver did not converge: {0}")]
    NoConvergence(String),
    #[error("no Green table available for {0}")]
    GreenUnavailable(String),
    #[error("window {window} does not contain the crossing box of radius {radius}")]
    WindowTooSmall { window: String, radius: i64 },
    #[error("padding {padding} is below the safety floor {floor}")]
    PaddingTooSmall { padding: i64, floor: i64 },
    #[error("no bracket found: {0}")]
    NoBracket(String),
    #[error("budget exhausted: {0}")]
    BudgetExhausted(String),
    #[error("frontier is empty")]
    FrontierEmpty,
    #[error("bad file format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
