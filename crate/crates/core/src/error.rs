use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid scene config: {0}")]
    SceneConfig(String),

    #[error("scene would self-intersect: worst-case amplitude sum {sum} >= {limit}")]
    SelfIntersection { sum: f64, limit: f64 },

    #[error("invalid camera: {0}")]
    Camera(String),

    #[error("dimension mismatch: expected {expected}, got {got} ({what})")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid network config: {0}")]
    NetConfig(String),

    #[error("compression violated: K' = {k_prime} must be smaller than K = {k}")]
    CompressionViolated { k: usize, k_prime: usize },

    #[error("pixel ({u}, {v}) outside {width}x{height} image")]
    PixelOutOfBounds {
        u: usize,
        v: usize,
        width: usize,
        height: usize,
    },

    #[error("region label {label} out of range for {n_regions} regions")]
    RegionLabel { label: usize, n_regions: usize },

    #[error("invalid sampler input: {0}")]
    Sampler(String),

    #[error("invalid mesh request: {0}")]
    Mesh(String),

    #[error("empty frame: every region has zero area")]
    EmptyFrame,

    #[error("invalid training config: {0}")]
    TrainConfig(String),

    #[error("config hash mismatch: {0}")]
    ConfigHash(String),

    #[error("image shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch(Vec<usize>, Vec<usize>),

    #[error("image {got:?} smaller than the {window}x{window} SSIM window")]
    ImageTooSmall { got: (usize, usize), window: usize },

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("malformed dataset: {0}")]
    Dataset(String),

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

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn image(path: impl Into<PathBuf>, source: image::ImageError) -> Self {
        Error::Image {
            path: path.into(),
            source,
        }
    }
}
