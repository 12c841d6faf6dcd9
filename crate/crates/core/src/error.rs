use std::fmt;

/// Errors produced by volume construction, pipelines and codecs.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("non-finite cost")]
    NonFiniteCost,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("{0}")]
    Format(#[from] FormatError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Decoding failures for the on-disk disparity and image formats.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FormatError {
    #[error("bad magic: expected \"Pf\"")]
    BadMagic,
    #[error("color PFM unsupported")]
    ColorPfmUnsupported,
    #[error("malformed header: {0}")]
    BadHeader(String),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("unsupported png: {0}")]
    UnsupportedPng(String),
    #[error("image decode failed: {0}")]
    Decode(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(what: impl fmt::Display) -> Error {
    Error::ShapeMismatch(what.to_string())
}

pub(crate) fn invalid(what: impl fmt::Display) -> Error {
    Error::InvalidArgument(what.to_string())
}
