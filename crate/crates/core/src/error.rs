//! Error types shared across the crate.

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("mean function unbounded on [0,T]: |f| exceeds {guard:e} near t = {t}")]
    MeanUnbounded { t: f64, guard: f64 },

    #[error("mean function hits zero near t = {t}")]
    MeanHitsZero { t: f64 },

    #[error("mean ODE residual {residual:e} exceeds tolerance {tol:e} at t = {t}")]
    MeanResidual { t: f64, residual: f64, tol: f64 },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("path diverged at step {step}")]
    PathDiverged { step: usize },

    #[error("variation process lost positivity at step {step}: jump multiplier 1 + M = {multiplier}")]
    VariationLostPositivity { step: usize, multiplier: f64 },

    #[error("variation process numerically singular at step {step}: |Y| = {magnitude:e}")]
    VariationSingular { step: usize, magnitude: f64 },

    #[error("Malliavin weight undefined for jump-free model")]
    JumpFreeWeight,

    #[error("invalid payoff: {0}")]
    InvalidPayoff(String),

    #[error("pathwise method invalid for discontinuous payoff")]
    PathwiseDiscontinuous,

    #[error("invalid estimator request: {0}")]
    InvalidEstimate(String),

    #[error("estimates are not comparable: {0}")]
    IncomparableEstimates(String),

    #[error("convergence study needs at least {needed} refinement levels, got {got}")]
    InsufficientLevels { needed: usize, got: usize },

    #[error("config error at line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("config error: {0}")]
    ConfigGeneral(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by a bad run configuration rather than a
    /// runtime failure; the CLI maps these to exit code 2.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config { .. } | Error::ConfigGeneral(_))
    }
}
