use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("singular cross-section evaluation at theta = 0 (exponent {exponent})")]
    SingularCrossSection { exponent: f64 },

    #[error("operation requires an integrable angular cross-section (alpha < 0), got alpha = {alpha}")]
    NonIntegrableCrossSection { alpha: f64 },

    #[error("kernel evaluated at coincident points v = xi")]
    CoincidentPoints,

    #[error("matrix of {bytes} bytes exceeds the memory budget of {budget} bytes")]
    MemoryBudget { bytes: usize, budget: usize },

    #[error("representation mismatch: {0}")]
    RepresentationMismatch(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("quadrature tolerance not met: requested {requested:e}, achieved {achieved:e}")]
    ToleranceNotMet { requested: f64, achieved: f64 },

    #[error("constraint matrix is rank deficient (pivot {pivot:e} at row {row})")]
    RankDeficient { row: usize, pivot: f64 },

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("ill-conditioned constraint Gram matrix (condition estimate {cond:e})")]
    IllConditioned { cond: f64 },

    #[error("eigensolver failure: {0}")]
    Eigensolver(String),

    #[error("null-mode count {found} differs from expected {expected}")]
    NullModeCount { found: usize, expected: usize },

    #[error("angular quadrature failed at cell pair ({k}, {kbar}) target {m}: {source}")]
    AngularQuadrature {
        k: usize,
        kbar: usize,
        m: usize,
        source: Box<Error>,
    },

    #[error("assembly asymmetry {max_asym:e} exceeds bound {bound:e}")]
    AsymmetryBound { max_asym: f64, bound: f64 },

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),

    #[error("config error: {0}")]
    Config(String),
}
