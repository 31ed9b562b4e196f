use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] blockcorr::Error),

    #[error("{}: {message}", line.map(|l| format!("line {l}")).unwrap_or_else(|| "input".into()))]
    Parse { line: Option<u64>, message: String },

    #[error("{0}")]
    Config(String),

    #[error("cannot read {}: {source}", path.display())]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("cannot write {what}: {source}")]
    Write {
        what: String,
        source: std::io::Error,
    },

    /// Correlation matrix could not be inverted and shrinkage was not requested.
    #[error("{0}; pass --shrink-correlation to regularize toward the identity")]
    Correlation(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use blockcorr::Error as E;
        match self {
            CliError::Core(E::Ties { .. }) => 3,
            CliError::Core(E::Singular { .. }) | CliError::Correlation(_) => 4,
            CliError::Core(E::Capacity { .. }) => 5,
            CliError::Write { .. } => 1,
            _ => 2,
        }
    }

    pub fn parse(line: Option<u64>, message: impl Into<String>) -> Self {
        CliError::Parse {
            line,
            message: message.into(),
        }
    }

    pub fn write(what: impl Into<String>, source: std::io::Error) -> Self {
        CliError::Write {
            what: what.into(),
            source,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
