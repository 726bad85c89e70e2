use std::path::PathBuf;

use cortex_align::Error as CoreError;
use thiserror::Error;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("stage '{stage}' has not been run: {} is missing (run `{command}` first)", path.display())]
    MissingStage {
        stage: &'static str,
        command: &'static str,
        path: PathBuf,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error("backend error: {0}")]
    Backend(String),

    #[error(transparent)]
    Core(#[from] CoreError),
}

impl CliError {
    /// 1 usage or config, 2 data, 3 backend.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) | CliError::MissingStage { .. } => 1,
            CliError::Data(_) => 2,
            CliError::Backend(_) => 3,
            CliError::Core(e) => match e {
                CoreError::Param(_) | CoreError::Shape(_) | CoreError::BatchSize(_) | CoreError::State(_) => 1,
                CoreError::Backend { .. } => 3,
                CoreError::Data(_)
                | CoreError::EmptyInput(_)
                | CoreError::Load { .. }
                | CoreError::Io(_)
                | CoreError::Json(_) => 2,
            },
        }
    }
}
