use thiserror::Error;

/// Errors raised by the solvers, oracles and harness.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite value at node {node}")]
    NonFinite { node: usize },

    #[error("dual maximization did not converge after {iterations} iterations (q = {q:?}); Hamiltonian may not be coercive")]
    NonConvergence { iterations: usize, q: Vec<f64> },

    #[error("minimizer reached the search window boundary at t = {t}, x = {x:?} (node {node:?}); enlarge q_max")]
    WindowTooSmall {
        t: f64,
        x: Vec<f64>,
        node: Option<usize>,
    },

    #[error("time {t} outside [0, {horizon}]")]
    OutOfRange { t: f64, horizon: f64 },

    #[error("unsupported problem for this oracle: {0}")]
    UnsupportedProblem(String),

    #[error("policy iteration did not converge within {iterations} iterations at t = {t}")]
    PolicyIterationDiverged { iterations: usize, t: f64 },

    #[error("switching fixed point did not converge within {iterations} sweeps at t = {t} (residual {residual:e})")]
    FixedPointDiverged {
        iterations: usize,
        t: f64,
        residual: f64,
    },

    #[error("no oracle available: {0}")]
    OracleUnavailable(String),

    #[error("step failed at t = {t}: {source}")]
    StepFailed {
        t: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
