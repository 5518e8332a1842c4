use std::io;

use thiserror::Error;

/// Errors produced anywhere in the benchmarking engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("histogram has fewer than two occupied bins")]
    DegenerateHistogram,

    #[error("target resolution {target_mpp} mpp is finer than base resolution {base_mpp} mpp")]
    UnsupportedResolution { target_mpp: f64, base_mpp: f64 },

    #[error("storage error: {0}")]
    Storage(#[from] io::Error),

    #[error("format error: {0}")]
    Format(String),

    #[error("corrupt file: {0}")]
    CorruptFile(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("infeasible task: {0}")]
    InfeasibleTask(String),

    #[error("infeasible split: {0}")]
    InfeasibleSplit(String),

    #[error("missing features for slide {0}")]
    MissingFeatures(String),

    #[error("all paired differences are zero")]
    DegeneratePair,

    #[error("image error: {0}")]
    Image(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl From<image::ImageError> for Error {
    fn from(e: image::ImageError) -> Self {
        Error::Image(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Format(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}
