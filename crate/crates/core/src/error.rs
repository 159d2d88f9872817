use alloc::string::String;

/// Errors produced by the algorithmic core.
///
/// The variants map onto the error categories the command line reports:
/// configuration problems, malformed data, vocabulary parse failures,
/// checkpoint transfer mismatches and training aborts.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("transfer error: {0}")]
    Transfer(String),

    #[error("training aborted at step {step}: {message}")]
    Training { step: u64, message: String },
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn transfer(msg: impl Into<String>) -> Self {
        Error::Transfer(msg.into())
    }

    /// Short machine-readable category name.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Data(_) => "data",
            Error::Parse { .. } => "parse",
            Error::Transfer(_) => "transfer",
            Error::Training { .. } => "training",
        }
    }
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
