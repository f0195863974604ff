use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("points are {distance} apart, minimal geodesic is only unique below rho = {rho}")]
    DistanceTooLarge { distance: f64, rho: f64 },

    #[error("heat kernel time must be positive, got {0}")]
    NonPositiveTime(f64),

    #[error("frame chart undefined at {point:?} (within {margin} rad of a pole)")]
    ChartUndefined { point: Vec<f64>, margin: f64 },

    #[error("per-step proposal exceeded {attempts} rejections")]
    ProposalFailure { attempts: usize },

    #[error("winding lift defect {defect} exceeds tolerance")]
    LiftDefect { defect: f64 },

    #[error("loop is not contractible (winding {winding:?})")]
    NotContractible { winding: Vec<i64> },

    #[error("empirical measure needs at least one sample")]
    EmptySample,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid manifold: {0}")]
    InvalidManifold(String),

    #[error("invalid connection: {0}")]
    InvalidConnection(String),

    #[error("operation requires a U(1) view: {0}")]
    NotU1(String),

    #[error("invalid subgroup descriptor: {0}")]
    InvalidSubgroup(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("no admissible loop after {attempts} attempts for sample {index} (m = {m}); increase m or use admissibility \"lift\" on tori")]
    AdmissibilityExhausted { index: usize, attempts: usize, m: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
