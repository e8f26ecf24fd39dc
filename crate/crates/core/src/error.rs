use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("second jump moment undefined (zeta1 = {zeta1} must exceed 2)")]
    SecondJumpMomentUndefined { zeta1: f64 },

    #[error("correlation not factorizable: {0}")]
    CorrelationNotFactorizable(String),

    #[error("empty horizon")]
    EmptyHorizon,

    #[error("column count mismatch at line {line}")]
    ColumnCountMismatch { line: usize },

    #[error("invalid return at line {line}")]
    InvalidReturn { line: usize },

    #[error("no data rows")]
    NoDataRows,

    #[error("invalid feature: t = {t}, wealth = {wealth}")]
    InvalidFeature { t: f64, wealth: f64 },

    #[error("stale cache: {0}")]
    StaleCache(String),

    #[error("forward pass not retained")]
    ForwardNotRetained,

    #[error("no paths")]
    NoPaths,

    #[error("training diverged at step {step}")]
    Diverged { step: usize },

    #[error("insolvent state outside closed-form domain (wealth = {0})")]
    Insolvent(f64),

    #[error("invalid scalarization: rho = {0}")]
    InvalidScalarization(f64),

    #[error("malformed path cache: {0}")]
    MalformedCache(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
