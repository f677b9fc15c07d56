use thiserror::Error;

/// Errors produced across the toolkit.
#[derive(Debug, Error)]
pub enum DmdError {
    #[error("singular affine transform (|det| = {0:e})")]
    SingularTransform(f64),

    #[error("minutia at ({x:.2}, {y:.2}) lies outside the {width}x{height} raster")]
    MinutiaOutOfBounds {
        x: f64,
        y: f64,
        width: usize,
        height: usize,
    },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("need at least {required} correspondences, got {got}")]
    Underdetermined { required: usize, got: usize },

    #[error("ransac found no model with at least {0} inliers")]
    NoConsensus(usize),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid cylinder")]
    InvalidCylinder,

    #[error("non-finite loss value in finite-difference stencil")]
    NonFiniteLoss,

    #[error("template format error: {0}")]
    Format(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("missing ground truth: {0}")]
    MissingTruth(&'static str),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, DmdError>;
