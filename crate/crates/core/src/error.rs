use std::path::PathBuf;

/// Errors produced anywhere in the stereo pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch on {axis} (expected {expected}, found {found})")]
    Shape {
        op: &'static str,
        axis: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("batchnorm layer `{0}` has no running moments; run at least one training step first")]
    UninitializedMoments(String),

    #[error("target disparity {target} out of range [0, {max}] at pixel {pixel}")]
    TargetOutOfRange { pixel: usize, target: usize, max: usize },

    #[error("max disparity {max_disp} must be smaller than the image width {cols}")]
    DisparityTooLarge { max_disp: usize, cols: usize },

    #[error("disparity {0} cannot be encoded (must be below 256)")]
    EncodeRange(f32),

    #[error("unsupported or corrupt file format: {0}")]
    Format(String),

    #[error("no ground-truth pixels in the evaluated subset")]
    NoGroundTruth,

    #[error("patch example has no labeled pixels")]
    NoLabels,

    #[error("non-finite loss at iteration {iteration} (lr {lr}, batch index {batch})")]
    NonFinite { iteration: usize, lr: f64, batch: usize },

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
    pub(crate) fn shape(op: &'static str, axis: &'static str, expected: usize, found: usize) -> Self {
        Error::Shape {
            op,
            axis,
            expected,
            found,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
