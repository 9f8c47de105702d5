//! Error taxonomy shared across the crate.
//!
//! Variants are grouped by how the CLI maps them to exit codes: configuration
//! problems (2), data/schema problems (3), and runtime failures (4).

use thiserror::Error;

pub type Result<T> = std::result::Result<T, PdiError>;

#[derive(Debug, Error)]
pub enum PdiError {
    /// Invalid configuration (bad parameter ranges, inconsistent settings).
    #[error("config error: {0}")]
    Config(String),

    /// Input data does not match the expected schema (missing columns,
    /// missing variant keys, missing demographic axes).
    #[error("schema error: {0}")]
    Schema(String),

    /// Input data failed validation or could not be parsed.
    #[error("data error: {0}")]
    Data(String),

    /// A function received arguments outside its contract.
    #[error("input error: {0}")]
    Input(String),

    /// A group has no labeled records, so no human-anchored estimate exists.
    #[error("empty group `{0}`: no labeled records")]
    EmptyGroup(String),

    /// A group's records are too degenerate to resample (retry cap exceeded).
    #[error("degenerate group `{0}`: {1}")]
    DegenerateGroup(String, String),

    /// Any other runtime failure.
    #[error("runtime error: {0}")]
    Runtime(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl PdiError {
    /// Process exit code for the CLI: 0 success, 2 config, 3 data, 4 runtime.
    pub fn exit_code(&self) -> i32 {
        match self {
            PdiError::Config(_) => 2,
            PdiError::Schema(_) | PdiError::Data(_) => 3,
            _ => 4,
        }
    }
}
