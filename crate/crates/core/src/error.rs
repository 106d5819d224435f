use thiserror::Error;

pub type Result<T> = std::result::Result<T, NitsError>;

#[derive(Debug, Error)]
pub enum NitsError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("numerical overflow in layer {layer}: {what}")]
    NumericalOverflow { layer: usize, what: String },

    #[error("bisection did not converge after {iters} iterations; last bracket [{lo}, {hi}]")]
    Convergence { iters: usize, lo: f64, hi: f64 },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("training diverged: {consecutive} consecutive non-finite batches in epoch {epoch}")]
    Diverged { consecutive: usize, epoch: usize },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: u64,
        msg: String,
    },

    #[error("checkpoint integrity: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
