use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad command line or an empty method set; exit code 2.
    #[error("usage: {0}")]
    Usage(String),

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("writing output: {0}")]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Model(#[from] heatvol::Error),

    /// Some rows could not be computed; they are written with an `error`
    /// flag.
    #[error("{0} of the requested cells failed")]
    FailedCells(usize),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
