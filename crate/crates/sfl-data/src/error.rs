use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("bad IDX magic: expected {expected:#010x}, got {got:#010x}")]
    BadMagic { expected: u32, got: u32 },
    #[error("malformed data: {0}")]
    Malformed(String),
    #[error("label {label} out of range for {classes} classes")]
    BadLabel { label: u32, classes: usize },
    #[error("partition: {0}")]
    Partition(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
