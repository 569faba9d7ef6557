use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch on axis {axis}: {left} vs {right}")]
    ShapeMismatch {
        op: &'static str,
        axis: usize,
        left: usize,
        right: usize,
    },
    #[error("{op}: {msg}")]
    Dimension { op: &'static str, msg: String },
    #[error("non-finite value encountered in {context}")]
    NonFinite { context: String },
    #[error("backward already consumed this computation record; run a new forward first")]
    BackwardConsumed,
    #[error("backward root must be a scalar, got shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },
    #[error("reduction over empty extent on axis {axis}")]
    EmptyReduction { axis: usize },
    #[error("cross-entropy target has no valid pixels (all ignored)")]
    AllPixelsIgnored,
    #[error("model contains no batch-norm layer to convert")]
    NoBatchNorm,
    #[error("model is already converted to a calibrated variant ({variant})")]
    AlreadyConverted { variant: String },
    #[error("unknown parameter {0}")]
    UnknownParam(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
