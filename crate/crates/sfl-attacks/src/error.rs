use thiserror::Error;

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("attack needs a non-empty dataset")]
    EmptyDataset,
    #[error("budget {budget} cannot afford {steps} crafting steps per instance")]
    BudgetTooSmall { budget: u64, steps: u32 },
    #[error("surrogate variant: {0}")]
    Variant(String),
    #[error("generator diverged: non-finite {0}")]
    GeneratorDiverged(String),
    #[error(transparent)]
    Core(#[from] sfl_core::CoreError),
    #[error(transparent)]
    Nn(#[from] sfl_nn::NnError),
}

impl From<AttackError> for sfl_core::CoreError {
    fn from(e: AttackError) -> Self {
        match e {
            AttackError::Core(c) => c,
            AttackError::Nn(n) => sfl_core::CoreError::Nn(n),
            other => sfl_core::CoreError::QueryLog(other.to_string()),
        }
    }
}
