use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("reconstruction diverged at cascade {cascade}, iteration {iteration}")]
    Diverged { cascade: usize, iteration: usize },

    #[error("mask calibration failed: {0}")]
    Calibration(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("bad magic bytes in {path}")]
    BadMagic { path: PathBuf },

    #[error("unsupported container version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("truncated container: needed {needed} bytes at offset {offset}, file has {len}")]
    Truncated { offset: usize, needed: usize, len: usize },

    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Checksum { stored: u32, computed: u32 },

    #[error("malformed header: {0}")]
    Header(String),

    #[error("config mismatch: {0}")]
    ConfigMismatch(String),

    #[error("training diverged at epoch {epoch}, step {step}")]
    TrainingDiverged { epoch: usize, step: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable tag, used for the CLI's one-line error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape(_) => "shape",
            Error::Contract(_) => "contract",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Diverged { .. } => "diverged",
            Error::Calibration(_) => "calibration",
            Error::Degenerate(_) => "degenerate",
            Error::BadMagic { .. } => "bad_magic",
            Error::Version { .. } => "version",
            Error::Truncated { .. } => "truncated",
            Error::Checksum { .. } => "checksum",
            Error::Header(_) => "header",
            Error::ConfigMismatch(_) => "config_mismatch",
            Error::TrainingDiverged { .. } => "training_diverged",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
