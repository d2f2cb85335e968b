use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("validation failed: {0}")]
    Validation(String),

    #[error("invariant check failed: {0}")]
    Invariant(String),

    #[error(transparent)]
    Core(lama_core::Error),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl From<lama_core::Error> for CliError {
    fn from(e: lama_core::Error) -> Self {
        use lama_core::Error as E;
        match e {
            E::InvalidParam(_) | E::Shape(_) | E::Layer { .. } | E::Format { .. } => {
                CliError::Validation(e.to_string())
            }
            E::Io { ref source, .. } if source.kind() == std::io::ErrorKind::NotFound => {
                CliError::Validation(e.to_string())
            }
            other => CliError::Core(other),
        }
    }
}

impl CliError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Invariant(_) => 3,
            CliError::Core(_) => 1,
        }
    }
}
