use thiserror::Error;

/// Errors raised anywhere in the solver pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("singular system: {0}")]
    Singular(String),
    #[error("did not converge: {0}")]
    Convergence(String),
    #[error("no stabilizing Riccati solution: {0}")]
    Riccati(String),
    #[error("horizon too short: {0}")]
    Horizon(String),
    #[error("integrator failure: {0}")]
    Integrator(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("infinite-horizon tail not certified: {0}")]
    Tail(String),
    #[error("refused by frequency gate: {0}")]
    Gate(String),
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("simulated path overflow: {0}")]
    Overflow(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
