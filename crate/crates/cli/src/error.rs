use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Model(#[from] qndsim::Error),

    #[error("numerical tolerance exceeded: {0}")]
    Tolerance(String),

    #[error("replay mismatch: {0}")]
    Replay(String),

    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },
}

impl CliError {
    /// 2 for anything wrong with the request, 3 for numerical failures.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Tolerance(_) | CliError::Replay(_) => 3,
            CliError::Model(e) => match e {
                qndsim::Error::StepConvergence { .. } => 3,
                qndsim::Error::Io(_) | qndsim::Error::Csv(_) | qndsim::Error::Json(_) => 1,
                _ => 2,
            },
            CliError::Io { .. } => 1,
        }
    }

    pub fn io(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> Self {
        let context = context.into();
        move |source| CliError::Io { context, source }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
