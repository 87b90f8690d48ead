use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the simulator library.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("division by zero: {0}")]
    DivisionByZero(&'static str),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    /// A HARQ process already used all of its transmission attempts.
    #[error("HARQ process {process_id} exhausted after {tx_count} transmissions")]
    ExhaustedProcess { process_id: usize, tx_count: u8 },

    /// Feedback referenced a process the engine does not know. This is an engine bug.
    #[error("feedback for unknown HARQ process {process_id} of UE {ue_id}")]
    UnknownProcess { ue_id: usize, process_id: usize },

    #[error("policy error: {0}")]
    Policy(String),

    #[error("failed to parse {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),

    /// A configuration value violates its documented constraint.
    #[error("invalid value for `{key}`: {constraint}")]
    Constraint { key: String, constraint: String },

    #[error("bad override `{0}`: expected key=value")]
    Override(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_probability(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} = {p} is not a probability in [0, 1]")))
    }
}
