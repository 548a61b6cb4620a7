use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated the operation's preconditions.
    #[error("rejected input: {0}")]
    InvalidInput(String),

    /// `p_i > 0` where `q_i == 0`.
    #[error("KL divergence undefined: p[{index}] > 0 but q[{index}] = 0")]
    DivergenceUndefined { index: usize },

    /// Two pipeline stages disagree about what the other produced.
    #[error("pipeline wiring error: {0}")]
    Wiring(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("transport error after {attempts} attempt(s){}: {message}", status.map(|s| format!(" (last status {s})")).unwrap_or_default())]
    Transport {
        attempts: u32,
        status: Option<u16>,
        message: String,
    },

    #[error("curation produced an empty curriculum at iteration {iteration} ({valid} valid questions, none kept)")]
    EmptyCurriculum { iteration: u32, valid: usize },

    #[error("malformed file {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("{phase} phase failed at iteration {iteration}, step {step}: {source}")]
    Phase {
        phase: &'static str,
        iteration: u32,
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn in_phase(self, phase: &'static str, iteration: u32, step: usize) -> Self {
        match self {
            // keep the innermost context
            e @ Error::Phase { .. } => e,
            e @ Error::EmptyCurriculum { .. } => e,
            other => Error::Phase {
                phase,
                iteration,
                step,
                source: Box::new(other),
            },
        }
    }

    /// Innermost error, looking through phase context.
    pub fn root(&self) -> &Error {
        match self {
            Error::Phase { source, .. } => source.root(),
            e => e,
        }
    }
}
