use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AsdError {
    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("wav error at {path}: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },

    #[error("json error in {context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("file name does not match layout {layout}: {path}")]
    Layout { layout: String, path: PathBuf },

    #[error("no audio files found under {0}")]
    NoAudio(PathBuf),

    #[error("unsupported audio format in {path}: {reason}")]
    AudioFormat { path: PathBuf, reason: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("{0}")]
    InvalidInput(String),

    #[error("non-finite gradient in parameter {0}")]
    NonFiniteGradient(String),

    #[error("backward called without a preceding training forward pass")]
    BackwardWithoutForward,

    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),

    #[error("corrupt artifact {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("no inlier model for {machine_type} id {product_id}")]
    MissingModel { machine_type: String, product_id: usize },

    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<AsdError>,
    },
}

pub type Result<T, E = AsdError> = std::result::Result<T, E>;

impl AsdError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AsdError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        AsdError::Json {
            context: context.into(),
            source,
        }
    }

    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        AsdError::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
