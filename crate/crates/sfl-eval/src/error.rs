use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("evaluation needs a non-empty dataset")]
    EmptyDataset,
    #[error("the victim classifies no evaluation sample correctly")]
    NoCorrectSamples,
    #[error("shape: {0}")]
    Shape(String),
    #[error(transparent)]
    Core(#[from] sfl_core::CoreError),
}
