use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("observation {obs} has zero probability after action {action}")]
    ZeroProbabilityObservation { action: usize, obs: usize },

    #[error("history step {step}: observation {obs} has zero probability after action {action}")]
    ImpossibleHistory {
        step: usize,
        action: usize,
        obs: usize,
    },

    #[error("index out of range: {what} = {index} (limit {limit})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("invalid stochastic matrix: row {row} {reason}")]
    InvalidStochasticMatrix { row: usize, reason: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("vector is not a probability distribution: {0}")]
    NotSimplex(String),

    #[error("value iteration did not converge: residual {residual:e} after {iterations} sweeps")]
    NotConverged { residual: f64, iterations: usize },

    #[error("singular linear system in policy evaluation")]
    SingularSystem,

    #[error("no (action, observation) pair yields a well-defined update for any sampled belief pair")]
    DegenerateModel,

    #[error("superstate is not part of the enumerated superstate space: {0}")]
    UnknownSuperstate(String),

    #[error("parameter out of range: {0}")]
    OutOfRange(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
