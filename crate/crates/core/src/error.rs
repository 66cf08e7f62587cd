use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("missing WordNet files in {dir}: {}", .files.join(", "))]
    MissingFiles { dir: PathBuf, files: Vec<String> },

    #[error("{file}:{line}: {msg}")]
    Parse {
        file: String,
        line: usize,
        msg: String,
    },

    #[error("unknown synset {0}")]
    UnknownSynset(String),

    #[error("no common subsumer for {0} and {1}")]
    NoCommonSubsumer(String, String),

    #[error("config error in `{field}`: {msg}")]
    Config { field: String, msg: String },

    #[error("data error: {0}")]
    Data(String),

    /// A caller violated an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A usage record that cannot be labeled; counted by ingest, never fatal there.
    #[error("skipped record: {0}")]
    Skip(String),

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error("check failed: {0}")]
    CheckFailed(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn config(field: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            msg: msg.into(),
        }
    }

    pub fn parse(file: impl Into<String>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            file: file.into(),
            line,
            msg: msg.into(),
        }
    }

    /// Process exit code used by the CLI: 1 config, 2 data, 3 check failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::Contract(_) => 1,
            Error::CheckFailed(_) => 3,
            _ => 2,
        }
    }
}
