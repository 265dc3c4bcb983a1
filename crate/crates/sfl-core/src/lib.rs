//! Split federated learning: model splitting, the client/server protocol
//! with FedAvg synchronization, the gradient-query-only server surface,
//! the L1 client-side defense, and the gradient-consistency probe.

pub mod client;
pub mod consistency;
pub mod error;
pub mod querylog;
pub mod server;
pub mod split;
pub mod sync;
pub mod training;

pub use client::{AttackPolicy, BenignClient, ClientOptConfig, MaliciousClient, QueryFeedback};
pub use consistency::gradient_consistency;
pub use error::CoreError;
pub use querylog::{GradientQueryRecord, QueryLog};
pub use server::{DefenseConfig, ServerOptConfig, SflMode, SflServer};
pub use split::{argmax_rows, model_logits, Classifier, InputGradModel, SplitModel};
pub use sync::{fedavg, fedavg_tensors};
pub use training::{
    centralized_train, desk_units, run_training, steps_per_epoch, CentralizedSetup,
    MaliciousSpec, TrainOutcome, TrainSetup,
};
