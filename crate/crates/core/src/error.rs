use thiserror::Error;

/// Errors produced by the protocol, the simulator and the attack tooling.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid edge ({receiver}, {sender}) for {n} agents (1-based receiver, sender)")]
    InvalidEdge {
        receiver: usize,
        sender: usize,
        n: usize,
    },

    #[error("unknown schedule `{0}`")]
    UnknownSchedule(String),

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("initial value {value} outside [{a}, {b}]")]
    OutOfRange { value: f64, a: f64, b: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("infeasible epsilon {epsilon}: {recipients} recipients need recipients * epsilon < 1")]
    InfeasibleEpsilon { epsilon: f64, recipients: usize },

    #[error("graph assumptions violated: {0}")]
    Assumptions(String),

    #[error("weight matrix rejected: {0}")]
    Validation(String),

    #[error("invalid query: {0}")]
    InvalidQuery(String),

    #[error("transcript was recorded without message logs")]
    InsufficientRecord,

    #[error("attack infeasible: {0}")]
    AttackInfeasible(String),

    #[error("rate fit degenerate: {0}")]
    FitDegenerate(String),

    #[error("invalid indistinguishability pair: {0}")]
    InvalidPair(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
