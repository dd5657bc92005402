use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("unsupported audio format in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("could not decode {path}: {reason}")]
    Decode { path: PathBuf, reason: String },

    #[error("no valid audio files found in {0}")]
    EmptyCorpus(PathBuf),

    #[error("transcoder binary `{binary}` could not be started: {reason}")]
    TranscoderMissing { binary: String, reason: String },

    #[error("transcoder build lacks an encoder for codec {codec}")]
    Capability { codec: String },

    #[error("transcode failed ({command}): {stderr}")]
    Transcode { command: String, stderr: String },

    #[error("encoder {codec} ignored the requested cutoff of {cutoff_hz} Hz (band energy ratio {ratio:.4})")]
    CutoffIgnored {
        codec: String,
        cutoff_hz: u32,
        ratio: f64,
    },

    #[error("{excluded} of {total} tracks failed to transcode (more than 1%)")]
    TooManyFailures { excluded: usize, total: usize },

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: String, actual: String },

    #[error("training diverged at epoch {epoch}, step {step}: loss is {loss}")]
    Diverged { epoch: usize, step: usize, loss: f64 },

    #[error("record {track_id} belongs to the test split and may not be used for training")]
    TestLeakage { track_id: String },

    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    #[error("manifest {path}, line {line}: {reason}")]
    Manifest {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("image export: {0}")]
    Image(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Attaches a path to bare `std::io` results.
pub(crate) trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|e| Error::io(path, e))
    }
}
