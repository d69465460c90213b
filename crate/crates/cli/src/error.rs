use s4m_autodiff::TensorError;
use s4m_core::Error;
use thiserror::Error as ThisError;

#[derive(Debug, ThisError)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] Error),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    /// 2 for configuration, 3 for data, 4 for numeric failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(e) => match e {
                Error::Config(_) => 2,
                Error::Data(_)
                | Error::Csv { .. }
                | Error::Io { .. }
                | Error::DegenerateVariable { .. }
                | Error::EmptyBank => 3,
                Error::NumericFailure { .. }
                | Error::Discretization { .. }
                | Error::Tensor(TensorError::NonFinite { .. }) => 4,
                _ => 1,
            },
        }
    }
}
