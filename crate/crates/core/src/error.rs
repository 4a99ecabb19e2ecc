use thiserror::Error;

/// Errors produced by the numerical laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("site index {index} out of range (n_x = {n_x})")]
    IndexOutOfRange { index: usize, n_x: usize },

    #[error("fiber {index} has zero mass")]
    ZeroMassFiber { index: usize },

    #[error("fiber {index} not normalized: mass {mass}")]
    NotNormalized { index: usize, mass: f64 },

    #[error("negative or non-finite density {value} at cell ({i}, {j})")]
    InvalidDensity { i: usize, j: usize, value: f64 },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("fiber {index} is degenerate (no cell above the absolute-continuity threshold)")]
    DegenerateFiber { index: usize },

    #[error("problem too large: {atoms} atoms exceeds cap {cap}")]
    SizeCap { atoms: usize, cap: usize },

    #[error("integration failure at step {step}: {reason}")]
    Integration { step: usize, reason: String },

    #[error("optimizer stagnated after {iterations} iterations: gradient norm {grad_norm:.3e} > tolerance {tolerance:.3e}")]
    Stagnation {
        iterations: usize,
        grad_norm: f64,
        tolerance: f64,
    },

    #[error("monotonicity could not be restored in fiber {fiber}")]
    Monotonicity { fiber: usize },

    #[error("particle {particle} blew up at step {step} (|theta| = {value})")]
    BlowUp {
        particle: usize,
        step: usize,
        value: f64,
    },

    #[error("fiber {index} is empty after binning; use more samples")]
    EmptyFiber { index: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("model assumption violated: {0}")]
    Assumption(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
