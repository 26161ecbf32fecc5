use thiserror::Error;

/// Errors produced by frame construction, estimation, solvers and the experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not a frame: {0}")]
    NotAFrame(String),

    #[error(
        "ill-conditioned frame operator (condition number {condition:.3e} exceeds cap {cap:.3e})"
    )]
    IllConditioned { condition: f64, cap: f64 },

    #[error("invalid dimensions: {0}")]
    InvalidDimensions(String),

    #[error("invalid parameters: {0}")]
    InvalidParameters(String),

    #[error("signal generation failed after {attempts} attempts: {reason}")]
    GenerationFailed { attempts: usize, reason: String },

    #[error("every sampled sparse combination of dictionary columns vanished ({degenerate} evaluations)")]
    DegenerateDictionary { degenerate: usize },

    #[error("condition cannot be evaluated: {0}")]
    ConditionUnevaluable(String),

    #[error("measurement matrix has a trivial kernel")]
    EmptyKernel,

    #[error("infeasible or degenerate problem: {0}")]
    InfeasibleOrDegenerate(String),

    #[error(
        "dictionary {index} is not a tight frame with bound 1 (bounds {lower:.3e}, {upper:.3e})"
    )]
    NotTight {
        index: usize,
        lower: f64,
        upper: f64,
    },

    #[error("invalid experiment spec: {0}")]
    InvalidSpec(String),

    #[error("malformed matrix file: {0}")]
    MalformedMatrix(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
