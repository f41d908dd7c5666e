use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: cannot parse {what}: {detail}")]
    Parse {
        path: PathBuf,
        line: usize,
        what: &'static str,
        detail: String,
    },

    #[error("{path}: bad file header, expected magic {expected:?}")]
    BadMagic { path: PathBuf, expected: &'static str },

    #[error("dimension mismatch: {context} (expected {expected}, got {got})")]
    DimensionMismatch {
        context: String,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("cluster {cluster} has no assigned frames{hint}")]
    EmptyCluster { cluster: usize, hint: String },

    #[error("video {video_id}: {frames} usable frames but {k} clusters; need at least one frame per cluster")]
    TooFewFrames {
        video_id: String,
        frames: usize,
        k: usize,
    },

    #[error("non-finite loss at epoch {epoch}; lower the learning rate")]
    NonFiniteLoss { epoch: usize },

    #[error("exhaustive decode limited to {max_frames} frames and {max_clusters} clusters, got {frames}x{clusters}")]
    ExhaustiveLimit {
        frames: usize,
        clusters: usize,
        max_frames: usize,
        max_clusters: usize,
    },

    #[error("video set mismatch: {0}")]
    VideoMismatch(String),

    #[error("order constraint violated: {0}")]
    OrderViolation(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
