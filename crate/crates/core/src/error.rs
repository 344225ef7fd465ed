use thiserror::Error;

/// Errors raised anywhere in the forecasting pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unbalanced panel: {0}")]
    UnbalancedPanel(String),
    #[error("registry conflict: {0}")]
    RegistryConflict(String),
    #[error("calendar error: {0}")]
    Calendar(String),
    #[error("zero range: {0}")]
    ZeroRange(String),
    #[error("empty support: {0}")]
    EmptySupport(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("degenerate regression: {0}")]
    DegenerateRegression(String),
    #[error("alignment error: expected {expected}, got {got}")]
    Alignment { expected: usize, got: usize },
    #[error("rank overflow: requested K={k}, maximum {max}")]
    RankOverflow { k: usize, max: usize },
    #[error("rank deficient: {0}")]
    RankDeficient(String),
    #[error("filter divergence at quarter {quarter}")]
    FilterDivergence { quarter: usize },
    #[error("degenerate window: {0}")]
    DegenerateWindow(String),
    #[error("degenerate DM: {0}")]
    DegenerateDm(String),
    #[error("infeasible calendar: {0}")]
    InfeasibleCalendar(String),
    #[error("invalid partition: {0}")]
    InvalidPartition(String),
    #[error("stratification error: {0}")]
    Stratification(String),
    #[error("empty permutation set")]
    EmptyPermutationSet,
    #[error("overlapping phases: {0}")]
    OverlappingPhases(String),
    #[error("non-orthonormal basis: deviation {0:.3e}")]
    NonOrthonormal(f64),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
