//! Crate-wide error type.

use thiserror::Error;

/// Guard threshold for divisions and norms. Any denominator (or vector
/// norm about to be divided by) smaller than this is reported as an
/// error instead of silently producing huge values.
pub const DIV_GUARD: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch (expected {expected}, got {got})")]
    ShapeMismatch {
        op: &'static str,
        expected: String,
        got: String,
    },

    #[error("{op}: non-finite value produced")]
    NonFinite { op: &'static str },

    #[error("{op}: denominator below guard threshold {DIV_GUARD}")]
    DivisionGuard { op: &'static str },

    #[error("{op}: vector norm below guard threshold (degenerate feature)")]
    DegenerateNorm { op: &'static str },

    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NotScalarLoss { shape: Vec<usize> },

    #[error("requested node is not on this tape")]
    NodeNotOnTape,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("png: {0}")]
    Png(String),

    #[error("png: unsupported feature: {0}")]
    PngUnsupported(String),

    #[error("training: {0}")]
    Training(String),

    #[error("config validation failed:\n{}", .0.join("\n"))]
    ConfigValidation(Vec<String>),

    #[error("stage {stage}: {message}")]
    Stage { stage: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn stage(stage: &str, message: impl Into<String>) -> Self {
        Error::Stage {
            stage: stage.to_string(),
            message: message.into(),
        }
    }
}
