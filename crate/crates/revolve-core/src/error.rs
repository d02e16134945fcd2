//! Error types shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on caller-supplied data failed.
    #[error("validation error: {0}")]
    Validation(String),

    /// A variable id was not found in the graph.
    #[error("unknown variable {0}")]
    UnknownVariable(String),

    /// The graph is not a DAG or is otherwise inconsistent.
    #[error("graph integrity error: {0}")]
    GraphIntegrity(String),

    /// An engine backend gave up after the configured attempts.
    #[error("engine error after {attempts} attempt(s): {message}")]
    Engine { attempts: u32, message: String },

    /// A scripted engine had no entry matching the request.
    #[error("scripted engine miss: {0}")]
    ScriptMiss(String),

    /// A template was rendered without binding every placeholder.
    #[error("template '{template}' rendered without binding '{placeholder}'")]
    Render { template: String, placeholder: String },

    /// Registry load or checksum failure.
    #[error("template registry error: {0}")]
    Registry(String),

    /// Run configuration is missing or invalid.
    #[error("config error: {0}")]
    Config(String),

    /// Dataset file is malformed or too short.
    #[error("dataset error{}: {message}", line.map(|l| format!(" (line {l})")).unwrap_or_default())]
    Dataset { line: Option<usize>, message: String },

    /// The surrounding environment cannot support the run (missing
    /// executor, cold cache, absent credentials).
    #[error("environment error: {0}")]
    Environment(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn validation(message: impl Into<String>) -> Self {
        Error::Validation(message.into())
    }

    /// Process exit code for the CLI: bad inputs (config, dataset,
    /// validation) are 2, environment errors are 3, everything else is a
    /// generic failure (1).
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Dataset { .. } | Error::Validation(_) => 2,
            Error::Environment(_) => 3,
            _ => 1,
        }
    }
}
