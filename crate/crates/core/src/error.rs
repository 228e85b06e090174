use thiserror::Error;

use crate::corrdim::DimError;
use crate::decoding::DecodeError;
use crate::ifs::IfsError;
use crate::rmr::RmrError;
use crate::trace::TraceError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Top-level error used by the command line and cross-module drivers.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Ifs(#[from] IfsError),
    #[error(transparent)]
    Dim(#[from] DimError),
    #[error(transparent)]
    Rmr(#[from] RmrError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    /// Short machine-readable category, used in CLI error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Trace(_) => "trace",
            Error::Ifs(_) => "ifs",
            Error::Dim(_) => "corrdim",
            Error::Rmr(_) => "rmr",
            Error::Decode(_) => "decoding",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Config(_) => "config",
        }
    }
}
