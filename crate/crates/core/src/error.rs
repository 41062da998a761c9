//! Error types shared across the pipeline.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot normalize a zero vector (norm {norm:e})")]
    ZeroVector { norm: f64 },

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("frame {index} is {got:?}, expected {expected:?} (width, height)")]
    DimensionMismatch {
        index: usize,
        expected: (usize, usize),
        got: (usize, usize),
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("video {video_id}: {labels} labels for {frames} frames")]
    LabelLengthMismatch {
        video_id: String,
        frames: usize,
        labels: usize,
    },

    #[error("grid {grid} is too fine for a {width}x{height} image")]
    GridTooFine {
        grid: usize,
        width: usize,
        height: usize,
    },

    #[error("split {split} would receive no subjects ({subjects} subjects available)")]
    InsufficientSubjects {
        split: &'static str,
        subjects: usize,
    },

    #[error("video {0} has no subject mapping")]
    UnmappedVideo(String),

    #[error("manifest {0} lists no videos")]
    EmptyManifest(PathBuf),

    #[error("no clip is labeled normal under the configured rates")]
    NoNormalClips,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("training diverged at epoch {epoch} (loss {loss})")]
    DivergenceDetected { epoch: usize, loss: f64 },

    #[error("evaluation needs both normal and anomalous clips ({positives} anomalous, {negatives} normal)")]
    SingleClassInput { positives: usize, negatives: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
