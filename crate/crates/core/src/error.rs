use thiserror::Error;

/// Errors raised by the reconstruction library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid staggered layout: {0}")]
    Layout(String),
    #[error("grid too small: {0}")]
    TooSmall(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error("index out of range: {0}")]
    Range(String),
    #[error("singular map: {0}")]
    Singular(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(what: &str, a: (usize, usize), b: (usize, usize)) -> Error {
    Error::Shape(format!("{what}: {a:?} vs {b:?}"))
}
