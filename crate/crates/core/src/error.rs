use thiserror::Error;

/// Errors raised by the modeling, simulation and control routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("mass matrix is ill-conditioned (condition number {condition:.3e})")]
    IllConditioned { condition: f64 },

    #[error("simulation diverged at step {step} (t = {time:.6} s): non-finite state")]
    Divergence { step: usize, time: f64 },

    #[error("equilibrium solver did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("singular Jacobian in equilibrium solve: {0}")]
    Singular(String),

    #[error("unsupported coupling family for this operation: {0}")]
    UnsupportedFamily(String),

    #[error("degenerate dataset: {0}")]
    DegenerateDataset(String),

    #[error("config error in `{field}`{}: {message}", line.map(|l| format!(" (line {l})")).unwrap_or_default())]
    Config {
        field: String,
        line: Option<usize>,
        message: String,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error on {path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
