//! Error type distinguishing configuration problems from runtime failures,
//! which the CLI maps to distinct exit codes.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    /// Bad configuration or command usage; exit code 1.
    #[error("{0}")]
    Validation(String),
    /// Failure while producing or reading artifacts; exit code 2.
    #[error("{0}")]
    Runtime(String),
    /// One or more embedded result checks failed; exit code 1.
    #[error("{0} result check(s) failed")]
    ChecksFailed(usize),
}

impl SimError {
    pub fn validation(context: &str, detail: impl std::fmt::Display) -> Self {
        SimError::Validation(format!("{context}: {detail}"))
    }

    pub fn runtime(context: &str, detail: impl std::fmt::Display) -> Self {
        SimError::Runtime(format!("{context}: {detail}"))
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            SimError::Validation(_) | SimError::ChecksFailed(_) => 1,
            SimError::Runtime(_) => 2,
        }
    }
}
