use thiserror::Error;

/// Error type shared by every module in the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// PLY header or payload could not be parsed; the message names the
    /// offending field or section.
    #[error("ply parse error: {0}")]
    PlyParse(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// A domain invariant was violated (e.g. `N >= 1`, non-finite values).
    #[error("invariant violated: {0}")]
    Invariant(String),

    /// Two inputs that must agree in shape or length do not.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// Bad configuration or parameter value.
    #[error("config error: {0}")]
    Config(String),

    /// Decoder checkpoint could not be read or written.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Encoder bundle and decoder disagree (identifier or message length).
    #[error("bundle/decoder mismatch: {0}")]
    BundleMismatch(String),

    #[error("image codec error: {0}")]
    ImageCodec(String),
}

pub type Result<T> = std::result::Result<T, Error>;
