use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("tensor data length {len} does not match dims {dims:?}")]
    BadTensor { dims: Vec<usize>, len: usize },
    #[error("unit {unit} ({kind}): expected input shape {expected}, got {got}")]
    ShapeMismatch {
        unit: usize,
        kind: String,
        expected: String,
        got: String,
    },
    #[error("unit {unit} ({kind}): {msg}")]
    BadUnit {
        unit: usize,
        kind: String,
        msg: String,
    },
    #[error("activation cache has {got} entries, expected {expected}")]
    BadActivationCache { expected: usize, got: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("batch size mismatch: logits carry {logits} rows, targets {targets}")]
    BatchMismatch { logits: usize, targets: usize },
    #[error("a model must contain at least 2 units, got {0}")]
    TooFewUnits(usize),
    #[error("non-finite value produced in {0}")]
    NonFinite(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
