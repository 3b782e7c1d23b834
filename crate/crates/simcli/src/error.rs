use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] rar_core::Error),

    /// Failure inside a replication, whatever its kind: the configuration
    /// was accepted, so the data path is to blame.
    #[error("run failed: {0}")]
    Run(rar_core::Error),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    /// 2 for anything the user can fix in the configuration, 3 for
    /// failures inside a run, 1 for I/O.
    pub fn exit_code(&self) -> u8 {
        use rar_core::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Core(E::InvalidParameter(_) | E::ArmMismatch { .. } | E::Unsupported(_) | E::Infeasible(_)) => 2,
            CliError::Core(_) | CliError::Run(_) => 3,
            CliError::Io(_) => 1,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
