use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SsaError {
    #[error("not an SSAT tensor file (bad magic)")]
    BadMagic,
    #[error("unsupported SSAT version {0}")]
    BadVersion(u16),
    #[error("truncated or oversized payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("tensor contains non-finite values")]
    NonFiniteData,
    #[error("invalid tensor dims {0:?}: rank must be 1-4 and every extent >= 1")]
    InvalidDims(Vec<usize>),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("unsupported SA depth {0}; expected 1, 2 or 3")]
    UnsupportedDepth(usize),
    #[error("missing feature map for stage {0}")]
    MissingStage(u8),
    #[error("invalid pipeline configuration: {0}")]
    InvalidConfig(String),
    #[error("mask has no foreground pixels")]
    EmptyMask,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("sample {0} has no ground-truth mask")]
    MissingMask(String),
    #[error("label {label} out of range for {n_classes} classes")]
    LabelOutOfRange { label: u32, n_classes: usize },
    #[error("invalid sample: {0}")]
    InvalidSample(String),
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error("sample {id}: {source}")]
    Sample {
        id: String,
        #[source]
        source: Box<SsaError>,
    },
    #[error("I/O failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl SsaError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SsaError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn in_sample(self, id: impl Into<String>) -> Self {
        SsaError::Sample {
            id: id.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error, looking through sample context wrappers.
    pub fn root(&self) -> &SsaError {
        match self {
            SsaError::Sample { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T, E = SsaError> = std::result::Result<T, E>;
