use thiserror::Error;

use crate::InstanceId;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        expected: (u32, u32),
        found: (u32, u32),
    },
    #[error("mask is empty")]
    EmptyMask,
    #[error("invalid raster: {0}")]
    InvalidRaster(String),
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("unknown instance id {0}")]
    UnknownId(InstanceId),
    #[error("occlusion graph has a cycle: {witness:?}")]
    Cycle { witness: Vec<InstanceId> },
    #[error("invalid occlusion matrix: {0}")]
    InvalidMatrix(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("could not place {wanted} sprites after {attempts} attempts")]
    Placement { wanted: usize, attempts: usize },
    #[error("no detections to select from")]
    NoDetections,
    #[error("{component} contract violated at step {step}: {detail}")]
    ContractViolation {
        step: usize,
        component: &'static str,
        detail: String,
    },
    #[error("bookkeeping mismatch: {0}")]
    Bookkeeping(String),
    #[error("invalid removal plan: {0}")]
    InvalidPlan(String),
    #[error("invalid edit: {0}")]
    InvalidEdit(String),
    #[error("annotation {annotation}: {detail}")]
    Annotation { annotation: u64, detail: String },
    #[error("{path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("png: {0}")]
    Png(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl From<png::DecodingError> for Error {
    fn from(e: png::DecodingError) -> Self {
        Error::Png(e.to_string())
    }
}

impl From<png::EncodingError> for Error {
    fn from(e: png::EncodingError) -> Self {
        Error::Png(e.to_string())
    }
}
