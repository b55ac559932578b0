use std::path::PathBuf;

use sweeping_core::Error as CoreError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("{op}: {source}")]
    Core {
        op: &'static str,
        #[source]
        source: CoreError,
    },

    #[error("cannot write {path}: {source}")]
    Output {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    /// 2 for anything the user can fix in the invocation, 1 otherwise.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core { source, .. } => match source {
                CoreError::InvalidArgument(_)
                | CoreError::UnknownProblem(_)
                | CoreError::UnknownParameter { .. }
                | CoreError::ExampleParams(_)
                | CoreError::IllPosedSchedule { .. }
                | CoreError::InitialStateOutside { .. }
                | CoreError::Normalization(_)
                | CoreError::Parse(_)
                | CoreError::EmptyControlSet => 2,
                _ => 1,
            },
            CliError::Output { .. } => 1,
        }
    }
}

/// Attaches the name of the failing operation to a core error.
pub trait Op<T> {
    fn op(self, name: &'static str) -> Result<T, CliError>;
}

impl<T> Op<T> for sweeping_core::Result<T> {
    fn op(self, name: &'static str) -> Result<T, CliError> {
        self.map_err(|source| CliError::Core { op: name, source })
    }
}
