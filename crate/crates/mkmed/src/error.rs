use std::path::PathBuf;

use mkmed_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("{0}")]
    Config(String),
    #[error("unknown experiment {0:?} (expected ablation, modality-sweep, alignment-comparison or param-sweep)")]
    UnknownExperiment(String),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }

    pub fn format(path: impl Into<PathBuf>, msg: impl ToString) -> CliError {
        CliError::Format { path: path.into(), msg: msg.to_string() }
    }

    /// Process exit status: 2 invalid input, 3 non-finite loss, 4 empty
    /// intersection, 5 vocabulary mismatch, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) => match e {
                CoreError::NonFiniteLoss { .. } => 3,
                CoreError::EmptyIntersection => 4,
                CoreError::VocabMismatch(_) => 5,
                CoreError::InvalidConfig(_) | CoreError::UnknownVariant(_) => 2,
                _ => 1,
            },
            CliError::Config(_) | CliError::UnknownExperiment(_) => 2,
            CliError::Io { .. } | CliError::Format { .. } => 1,
        }
    }
}
