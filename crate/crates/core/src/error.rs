use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure class, used by the command-line driver to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid code {raw:?}: {reason}")]
    Code { raw: String, reason: String },

    #[error("{path}:{line}: {reason}")]
    Parse {
        path: String,
        line: usize,
        reason: String,
    },

    #[error("duplicate category code {0}")]
    DuplicateCode(String),

    #[error("category {code} has no ancestor {missing} in the taxonomy (strict mode)")]
    MissingAncestor { code: String, missing: String },

    #[error("scheme mismatch: {0} vs {1}")]
    SchemeMismatch(String, String),

    #[error("level {level} out of range 1..={max}")]
    LevelOutOfRange { level: usize, max: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("no training pairs: {0}")]
    NoTrainingPairs(String),

    #[error("matrix is rank deficient (smallest eigenvalue {smallest:e}); use epsilon > 0")]
    RankDeficient { smallest: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("unknown code {code} in {context}")]
    UnknownCode { code: String, context: String },

    #[error("config: {0}")]
    Config(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) => ErrorKind::Usage,
            Error::RankDeficient { .. } | Error::Numerical(_) => ErrorKind::Numerical,
            Error::Stage { source, .. } => source.kind(),
            _ => ErrorKind::Data,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: &str, line: usize, reason: impl Into<String>) -> Self {
        Error::Parse {
            path: path.to_string(),
            line,
            reason: reason.into(),
        }
    }
}
