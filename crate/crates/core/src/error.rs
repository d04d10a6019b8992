use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("wav error on {path}: {source}")]
    Wav {
        path: PathBuf,
        source: hound::Error,
    },
    #[error("empty corpus: {0}")]
    EmptyCorpus(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("invalid rate allocation: {0}")]
    Allocation(String),
    #[error("channel error: {0}")]
    Channel(String),
    #[error("factorized prior is not monotone: {0}")]
    NonMonotonePrior(String),
    #[error("bitstream error: {0}")]
    Bitstream(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}

pub(crate) fn shape_err(what: &str, expected: &[usize], got: &[usize]) -> Error {
    Error::Shape(format!("{what}: expected {expected:?}, got {got:?}"))
}
