use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("index error: {0}")]
    Index(String),
    #[error("state error: {0}")]
    State(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("length error: {0}")]
    Length(String),
    #[error("consistency error: {0}")]
    Consistency(String),
    #[error("size error: {0}")]
    Size(String),
    #[error("training diverged at epoch {epoch}: {reason}")]
    Training { epoch: usize, reason: String },
    #[error("capability error: {0}")]
    Capability(String),
    #[error("balance error: {0}")]
    Balance(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Short machine-readable tag for the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::Numeric(_) => "numeric",
            Error::Index(_) => "index",
            Error::State(_) => "state",
            Error::Format(_) => "format",
            Error::Length(_) => "length",
            Error::Consistency(_) => "consistency",
            Error::Size(_) => "size",
            Error::Training { .. } => "training",
            Error::Capability(_) => "capability",
            Error::Balance(_) => "balance",
            Error::Data(_) => "data",
            Error::DegenerateInput(_) => "degenerate-input",
            Error::Config(_) => "config",
            Error::EmptyInput(_) => "empty-input",
            Error::Io { .. } => "io",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
