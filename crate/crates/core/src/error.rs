//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported sample rate {got} Hz (expected {expected} Hz, no resampling is performed)")]
    SampleRate { expected: u32, got: u32 },

    #[error("signal too short: {len} samples, need at least {min}")]
    SignalTooShort { len: usize, min: usize },

    #[error("non-finite sample at index {0}")]
    NonFiniteSample(usize),

    #[error("compression error: {0}")]
    Compression(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("unknown band scheme '{name}' (valid: {valid})")]
    UnknownScheme { name: String, valid: String },

    #[error("unknown model configuration '{name}' (valid: {valid})")]
    UnknownConfig { name: String, valid: String },

    #[error("silent signal: {0}")]
    SilentSignal(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("WAV error: {0}")]
    Wav(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("training diverged at step {step}: loss is not finite")]
    Diverged { step: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
