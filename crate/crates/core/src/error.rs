use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid voxel spacing ({0}, {1}, {2}): components must be positive and finite")]
    InvalidSpacing(f64, f64, f64),

    #[error("invalid dimensions {0:?}: every axis needs at least one voxel")]
    ZeroDimension([usize; 3]),

    #[error("data length {actual} does not match dims {dims:?} ({expected} voxels)")]
    DataLength {
        dims: [usize; 3],
        expected: usize,
        actual: usize,
    },

    #[error("bounding box {min:?}..={max:?} does not fit in volume {dims:?}")]
    BoxOutOfBounds {
        min: [usize; 3],
        max: [usize; 3],
        dims: [usize; 3],
    },

    #[error("volume grids differ: {0}")]
    GridMismatch(String),

    #[error("invalid label code {0}")]
    InvalidLabel(u8),

    #[error("negative or non-finite radius {0} mm")]
    InvalidRadius(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty RoI: no voxel above threshold {0}")]
    EmptyRoi(f64),

    #[error("empty pool: no blood-pool voxel survived thresholding")]
    EmptyPool,

    #[error("empty mask")]
    EmptyMask,

    #[error("geometry overflow: {0}")]
    GeometryOverflow(String),

    #[error("bad magic: expected \"n+1\\0\", found {0:?}")]
    BadMagic([u8; 4]),

    #[error("unsupported NIfTI datatype code {0}")]
    UnsupportedDatatype(i16),

    #[error("truncated NIfTI file: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },

    #[error("malformed NIfTI header: {0}")]
    BadHeader(String),

    #[error("label volume requested but voxel value {0} is outside the label vocabulary 0-10")]
    OutOfVocabulary(f64),

    #[error("template schema violation: {0}")]
    Schema(String),

    #[error("invalid correspondence: {0}")]
    InvalidCorrespondence(String),

    #[error("graph has {0} nodes; exhaustive matching is limited to {1}")]
    GraphTooLarge(usize, usize),

    #[error("empty graph")]
    EmptyGraph,

    #[error("match result does not cover graph: {0}")]
    IncompleteMatch(String),

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("malformed STL: {0}")]
    BadStl(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

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
}
