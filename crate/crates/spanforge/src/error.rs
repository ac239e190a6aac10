//! Error type shared by the loaders, the pipeline and the CLI.

use std::path::PathBuf;

/// Exit code for validation failures (bad data, bad flags, bad config).
pub const EXIT_VALIDATION: i32 = 1;
/// Exit code for I/O failures (missing files, unreadable paths).
pub const EXIT_IO: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// The file's header or structure does not match the expected schema.
    #[error("{}: {message}", path.display())]
    Schema { path: PathBuf, message: String },

    /// A single record failed validation; `line` is 1-based and counts the
    /// header row.
    #[error("{}:{line}: {message}", path.display())]
    Record {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("{}: {message}", path.display())]
    Config { path: PathBuf, message: String },

    #[error("{0}")]
    Invalid(String),

    #[error("stage {stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn invalid(message: impl Into<String>) -> Error {
        Error::Invalid(message.into())
    }

    pub fn at_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } => EXIT_IO,
            Error::Stage { source, .. } => source.exit_code(),
            _ => EXIT_VALIDATION,
        }
    }

    pub(crate) fn from_csv(path: &std::path::Path, err: csv::Error) -> Error {
        let position_line = err.position().map(|p| p.line());
        match err.into_kind() {
            csv::ErrorKind::Io(source) => Error::Io {
                path: path.to_path_buf(),
                source,
            },
            kind => match position_line {
                Some(line) => Error::Record {
                    path: path.to_path_buf(),
                    line,
                    message: format!("{kind:?}"),
                },
                None => Error::Schema {
                    path: path.to_path_buf(),
                    message: format!("{kind:?}"),
                },
            },
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
