//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("invalid disturbance index {index} (environment has {count})")]
    InvalidDisturbance { index: usize, count: usize },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("not enough samples: buffer holds {size}, batch needs {requested}")]
    NotEnoughSamples { size: usize, requested: usize },
    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },
    #[error(
        "value iteration did not converge within {max_sweeps} sweeps (residual {residual:.3e})"
    )]
    Convergence { max_sweeps: usize, residual: f64 },
    #[error("training diverged (non-finite loss) at step {step}")]
    TrainingDiverged { step: u64 },
    #[error("missing sources: {0}")]
    MissingSources(String),
    #[error("layout generation failed after {attempts} attempts: {reason}")]
    LayoutGeneration { attempts: usize, reason: String },
    #[error("task selection found only {achieved} of {requested} mutually dissimilar tasks")]
    TaskSelection { achieved: usize, requested: usize },
    #[error("empty learning curve")]
    EmptyCurve,
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("internal inconsistency: {0}")]
    Internal(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
