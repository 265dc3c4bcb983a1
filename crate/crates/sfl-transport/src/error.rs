use thiserror::Error;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("unknown message tag {0:#04x}")]
    UnknownTag(u8),
    #[error("truncated: {0}")]
    Truncated(String),
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("gradient dims {grad:?} do not answer activation dims {activation:?}")]
    GradientShape { activation: Vec<usize>, grad: Vec<usize> },
    #[error("protocol: {0}")]
    Protocol(String),
    #[error("actor: {0}")]
    Actor(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
