use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no statistics supplied")]
    EmptyInput,
    #[error("every statistic is zero; nothing left after preprocessing")]
    EmptyAfterPreprocessing,
    #[error("statistic for id `{id}` is not finite")]
    NonFinite { id: String },
    #[error("duplicate id `{id}`")]
    DuplicateId { id: String },
    #[error("unknown id `{id}`")]
    UnknownId { id: String },
    #[error("id `{id}` has a zero statistic and was dropped during preprocessing")]
    DroppedId { id: String },
    #[error("position {position} outside 1..={p}")]
    PositionOutOfRange { position: usize, p: usize },
    #[error("no v in 1..={p} satisfies the tail constraint for k={k} at alpha={alpha}")]
    InfeasibleK { k: u64, alpha: f64, p: usize },
    #[error("step size must be positive, got {delta}")]
    InvalidStepSize { delta: f64 },
    #[error("alpha must lie in (0, 1), got {alpha}")]
    InvalidAlpha { alpha: f64 },
    #[error("plan horizon p={plan_p} does not match the {stats_p} prepared statistics")]
    PlanMismatch { plan_p: usize, stats_p: usize },
    #[error("brute-force closed testing supports p <= {max}, got p={p}")]
    OracleSizeExceeded { p: usize, max: usize },
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("pool paths have length {path_length}, horizon {horizon} requested")]
    HorizonExceedsPool { horizon: usize, path_length: usize },
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
