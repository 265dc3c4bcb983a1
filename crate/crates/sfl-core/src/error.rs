use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("split point {n_server} invalid for {total} units (client must keep >= 1 unit)")]
    BadSplit { n_server: usize, total: usize },
    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Diverged { epoch: u32, loss: f64 },
    #[error("gradient consistency needs >= 2 snapshots, got {0}")]
    NotEnoughSnapshots(usize),
    #[error("mismatched client model shapes during synchronization")]
    SyncShapeMismatch,
    #[error("query log: {0}")]
    QueryLog(String),
    #[error(transparent)]
    Nn(#[from] sfl_nn::NnError),
    #[error(transparent)]
    Data(#[from] sfl_data::DataError),
    #[error(transparent)]
    Transport(#[from] sfl_transport::TransportError),
}

impl From<CoreError> for sfl_transport::TransportError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Transport(t) => t,
            other => sfl_transport::TransportError::Actor(other.to_string()),
        }
    }
}
