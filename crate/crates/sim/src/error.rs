use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid scenario: {0}")]
    Validation(String),
    #[error("I/O error: {0}")]
    Io(String),
    #[error(transparent)]
    Core(#[from] cond_core::Error),
    #[error("unsupported regime: {0}")]
    Unsupported(String),
}

impl SimError {
    /// Process exit code for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            SimError::Io(_) => 4,
            _ => 2,
        }
    }
}

impl From<std::io::Error> for SimError {
    fn from(e: std::io::Error) -> Self {
        SimError::Io(e.to_string())
    }
}
