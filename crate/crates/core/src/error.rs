use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("token id {token} at position {position} is outside the vocabulary (size {vocab_size})")]
    TokenOutOfVocabulary { token: u32, position: usize, vocab_size: usize },

    #[error("unknown token {surface:?} at position {position}")]
    UnknownSurface { surface: String, position: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("oracle unavailable: prefix support has {support} distinct windows, budget is {budget}")]
    OracleUnavailable { support: usize, budget: usize },

    #[error("degenerate prior for {suffix_id}: estimate is zero")]
    DegeneratePrior { suffix_id: String },

    #[error("calibration failed: {0}")]
    CalibrationFailed(String),

    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },

    #[error("protocol error (HTTP {status}): {body}")]
    Protocol { status: u16, body: String },

    #[error("integrity error: requested {expected} logprobs, endpoint returned {actual}")]
    Integrity { expected: usize, actual: usize },

    #[error("endpoint returned an invalid logprob {value} at index {index}")]
    InvalidLogprob { index: usize, value: f64 },

    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("prior trial {trial} for {suffix_id} aborted: {source}")]
    TrialAborted {
        suffix_id: String,
        trial: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("pipeline failure: {0}")]
    Pipeline(String),
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { context: context.into(), source }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// Process exit code for this error: 1 for failures inside the scoring
    /// or classification pipeline, 2 for bad configuration or input.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Transport { .. }
            | Error::Protocol { .. }
            | Error::Integrity { .. }
            | Error::InvalidLogprob { .. }
            | Error::DegeneratePrior { .. }
            | Error::CalibrationFailed(_)
            | Error::TrialAborted { .. }
            | Error::Pipeline(_) => 1,
            _ => 2,
        }
    }
}
