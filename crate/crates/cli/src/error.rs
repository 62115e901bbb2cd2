use thiserror::Error;

/// Failure classes, each with its own process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Internal(_) => 4,
        }
    }
}

impl From<laserpm_core::Error> for CliError {
    fn from(e: laserpm_core::Error) -> Self {
        use laserpm_core::Error as E;
        let msg = e.to_string();
        match e {
            E::Config(_) | E::Argument(_) => CliError::Config(msg),
            E::Data(_) | E::Shape(_) | E::Division(_) | E::Io { .. } | E::Json(_) => CliError::Data(msg),
            E::State(_) | E::Nn(_) => CliError::Internal(msg),
        }
    }
}

impl From<laserpm_nn::NnError> for CliError {
    fn from(e: laserpm_nn::NnError) -> Self {
        CliError::Data(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
