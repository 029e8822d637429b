use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration; `path` locates the offending field.
    #[error("config: {path}: {msg}")]
    Config { path: String, msg: String },

    #[error("format: {0}")]
    Format(String),

    #[error("corrupt: {0}")]
    Corruption(String),

    #[error("data: {0}")]
    Data(String),

    #[error("diverged: {0}")]
    Divergence(String),

    #[error("contract: {0}")]
    Autodiff(#[from] mgr_autodiff::Error),

    #[error("io: {}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("json: {}: {msg}", path.display())]
    Json { path: PathBuf, msg: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            msg: msg.into(),
        }
    }

    /// A violated operation precondition.
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Autodiff(mgr_autodiff::Error::Contract(msg.into()))
    }

    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| Error::Io { path, source }
    }
}
