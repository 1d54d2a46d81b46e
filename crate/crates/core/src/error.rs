//! Error types shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A tensor axis has the wrong extent; `axis` names the offending axis.
    #[error("{context}: axis `{axis}` expected {expected}, got {got}")]
    AxisMismatch {
        context: &'static str,
        axis: &'static str,
        expected: usize,
        got: usize,
    },

    /// Tensor shapes that must agree do not.
    #[error("{context}: shape {got:?} does not match expected {expected:?}")]
    ShapeMismatch {
        context: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    /// A scalar or configuration parameter is outside its valid range.
    #[error("invalid `{name}`: {message}")]
    InvalidParam { name: &'static str, message: String },

    /// A dataset or checkpoint file failed structural validation.
    #[error("file format: {0}")]
    Format(#[from] FormatError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Structural errors for the on-disk dataset and checkpoint formats.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum FormatError {
    #[error("bad magic, expected {expected:?}")]
    BadMagic { expected: &'static str },

    #[error("unsupported version {got}, expected {expected}")]
    Version { expected: u8, got: u8 },

    #[error("truncated file while reading {what}")]
    Truncated { what: &'static str },

    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),

    #[error("label {label} out of range for class_count {class_count}")]
    LabelOutOfRange { label: u16, class_count: u16 },

    #[error("{0}")]
    Invalid(String),
}

impl Error {
    /// True when the error points at malformed user input (files, configs)
    /// rather than an internal failure.
    pub fn is_user_error(&self) -> bool {
        matches!(
            self,
            Error::Format(_) | Error::InvalidParam { .. } | Error::Io(_)
        )
    }
}
