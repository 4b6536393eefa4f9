use thiserror::Error;

/// Errors raised by the sparse convolution engine.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration values: grid specs, ratios, channel counts.
    #[error("configuration error: {0}")]
    Config(String),

    /// Mismatched dimensions between tensors, weights and rulebooks.
    #[error("shape error: {0}")]
    Shape(String),

    /// A value fell outside the domain an operation accepts.
    #[error("domain error: {0}")]
    Domain(String),

    /// Internal invariants of a tensor were found broken.
    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("unsupported kernel size {0}: only odd sizes are supported")]
    UnsupportedKernel(usize),

    /// A rulebook builder was called with a kernel spec for the other mode.
    #[error("mode error: {0}")]
    Mode(String),

    /// Malformed input data (point files, weight files, labels).
    #[error("input error: {0}")]
    Input(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
