//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by model construction, numerics, and file formats.
#[derive(Debug, Error)]
pub enum Error {
    /// Shape or dimension mismatch between tensors, frames, or latent states.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Invalid configuration value (zero dimension, bad range, ...).
    #[error("config error: {0}")]
    Config(String),

    /// A computation produced a non-finite value.
    #[error("numerical error: {0}")]
    Numeric(String),

    /// Argument outside the mathematical domain of a function.
    #[error("domain error: {0}")]
    Domain(String),

    /// Malformed on-disk data (bad magic, truncation, inconsistent header).
    #[error("format error: {0}")]
    Format(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
