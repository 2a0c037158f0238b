use thiserror::Error;

/// Errors produced anywhere in the solver stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid topology: {0}")]
    Topology(String),

    #[error("graph is not connected")]
    Disconnected,

    #[error("could not sample a connected Erdos-Renyi graph after {attempts} attempts (m = {m}, p = {p})")]
    ErdosRenyiRetries { m: usize, p: f64, attempts: usize },

    #[error("agent index {index} out of range for {m} agents")]
    AgentIndex { index: usize, m: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("{what} did not converge within {iterations} iterations")]
    NoConvergence { what: &'static str, iterations: usize },

    #[error("point lives in the wrong space: expected {expected}, got {actual}")]
    SpaceMismatch { expected: &'static str, actual: &'static str },

    #[error("invalid measure: {0}")]
    Measure(String),

    #[error("operation requires a discrete measure")]
    NotDiscrete,

    #[error("invalid parameter `{field}`: {reason}")]
    Parameter { field: String, reason: String },

    #[error("protocol violation at agent {agent}: {reason}")]
    Protocol { agent: usize, reason: String },

    #[error("size guard exceeded: {0}")]
    SizeGuard(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn param(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Parameter {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
