use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("tape state: {0}")]
    State(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("empty prediction samples")]
    EmptySamples,
    #[error("method mismatch: {0}")]
    MethodMismatch(String),
    #[error("config: {0}")]
    Config(String),
    #[error("model file: {0}")]
    Format(String),
    #[error("training diverged at epoch {epoch}, step {step} (loss = {loss})")]
    Diverged { epoch: usize, step: usize, loss: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
