use std::path::PathBuf;

use thiserror::Error;

use crate::scorer::ScorerError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}:{line}: invalid UTF-8", path.display())]
    Encoding { path: PathBuf, line: usize },

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("{context}:{line}: {message}")]
    Format {
        context: String,
        line: usize,
        message: String,
    },

    #[error("segment {id} has no target side")]
    IncompleteCorpus { id: usize },

    #[error("text contains a line break ({0})")]
    LineBreak(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("scorer error{}: {source}", context.as_deref().map(|c| format!(" ({c})")).unwrap_or_default())]
    Scorer {
        context: Option<String>,
        #[source]
        source: ScorerError,
    },

    #[error("{hook} hook failed ({status}): {output}")]
    Hook {
        hook: String,
        status: String,
        output: String,
    },

    #[error("hook contract violated: {0}")]
    Contract(String),

    #[error("iteration {iteration}: {source}")]
    Iteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(context: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        Error::Format {
            context: context.into(),
            line,
            message: message.into(),
        }
    }

    /// Process exit code: 1 for validation/configuration problems, 2 for I/O,
    /// scorer transport and hook failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } | Error::Hook { .. } => 2,
            Error::Scorer { source, .. } => match source {
                ScorerError::Validation(_) => 1,
                _ => 2,
            },
            Error::Iteration { source, .. } => source.exit_code(),
            _ => 1,
        }
    }
}

impl From<ScorerError> for Error {
    fn from(source: ScorerError) -> Self {
        Error::Scorer {
            context: None,
            source,
        }
    }
}
