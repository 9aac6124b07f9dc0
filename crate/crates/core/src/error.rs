use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    /// A modelling assumption (noise admissibility, initial datum, grid
    /// constraints) does not hold. The message names the violated condition.
    #[error("{0}")]
    Assumption(String),

    #[error("nonlinear solve did not converge{}: residual {residual:.3e} after {iterations} iterations", step_suffix(*.step))]
    NonConvergence {
        step: Option<usize>,
        residual: f64,
        iterations: usize,
    },

    #[error("path failure at level {level}, path {path}: {source}")]
    PathFailure {
        level: usize,
        path: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("no signal: every point lies within two standard errors of zero ({excluded} excluded)")]
    NoSignal { excluded: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn step_suffix(step: Option<usize>) -> String {
    match step {
        Some(m) => format!(" at step {m}"),
        None => String::new(),
    }
}

pub type Result<T> = std::result::Result<T, Error>;
