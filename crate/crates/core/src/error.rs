use std::path::{Path, PathBuf};

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("unknown joint `{0}`")]
    UnknownJoint(String),

    #[error("plane {axis}={level} does not intersect the mesh")]
    EmptySection { axis: char, level: f64 },

    #[error("region [{lo}, {hi}] does not intersect the mesh")]
    EmptyRegion { lo: f64, hi: f64 },

    #[error("mesh exceeds the render frame: {0}")]
    OutOfFrame(String),

    #[error("decode error: {0}")]
    Decode(String),

    #[error("state error: {0}")]
    State(String),

    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Divergence { epoch: usize, loss: f64 },

    #[error("i/o error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    /// Short machine-parsable class name.
    pub fn class(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::InvalidInput(_) => "invalid_input",
            Error::Validation(_) => "validation",
            Error::UnknownJoint(_) => "lookup",
            Error::EmptySection { .. } => "empty_section",
            Error::EmptyRegion { .. } => "empty_region",
            Error::OutOfFrame(_) => "out_of_frame",
            Error::Decode(_) => "decode",
            Error::State(_) => "state",
            Error::Divergence { .. } => "divergence",
            Error::Io { .. } => "io",
        }
    }

    /// Process exit code: 2 configuration, 3 data, 4 divergence, 5 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Divergence { .. } => 4,
            Error::Io { .. } => 5,
            _ => 3,
        }
    }
}
