use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the segmentation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch on {axis}: expected {expected}, found {found}")]
    Dimension {
        axis: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("image of {height}x{width} is smaller than the minimum {min}x{min}")]
    ImageTooSmall {
        height: usize,
        width: usize,
        min: usize,
    },

    #[error("network expects {expected} classes but checkpoint has {found}")]
    ClassCountMismatch { expected: usize, found: usize },

    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    #[error("checkpoint {path}: checksum mismatch")]
    Checksum { path: PathBuf },

    #[error("label {label} at pixel {index} is outside 0..{classes} and is not the ignore label")]
    LabelOutOfRange {
        label: u8,
        index: usize,
        classes: usize,
    },

    #[error("pre-segmentation has {0} usable class(es); at least two are required")]
    SingleClass(usize),

    #[error("k-means needs at least {k} points, got {points}")]
    TooFewPoints { points: usize, k: usize },

    #[error("palette error in {path}: {reason}")]
    Palette { path: PathBuf, reason: String },

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

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

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dim(axis: &'static str, expected: usize, found: usize) -> Self {
        Error::Dimension {
            axis,
            expected,
            found,
        }
    }
}

/// Returns a dimension error unless `found == expected`.
pub(crate) fn check_dim(axis: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::dim(axis, expected, found))
    }
}
