use s4m_autodiff::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("discretization failed: (I - ΔA/2) is singular for Δ = {delta}")]
    Discretization { delta: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("prototype bank is empty; initialize it before reading")]
    EmptyBank,

    #[error("variable {variable} has no observed entries in the window")]
    DegenerateVariable { variable: usize },

    #[error("non-finite loss at epoch {epoch}, batch {batch}: {detail}")]
    NumericFailure {
        epoch: usize,
        batch: usize,
        detail: String,
    },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error at line {line}: {message}")]
    Csv { line: u64, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}
