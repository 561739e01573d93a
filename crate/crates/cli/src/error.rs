use std::process::ExitCode;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad arguments or local input; nothing was sent.
    #[error("usage: {0}")]
    Usage(String),
    /// The server answered with an error envelope.
    #[error("{code}: {message}")]
    Api { code: String, message: String },
    /// The server could not be reached or answered nonsense.
    #[error("transport: {0}")]
    Transport(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Usage(_) => ExitCode::from(2),
            _ => ExitCode::from(1),
        }
    }
}

impl From<saturn_core::Error> for CliError {
    fn from(e: saturn_core::Error) -> Self {
        CliError::Usage(e.to_string())
    }
}
