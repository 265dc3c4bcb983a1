//! Metrics and downstream attacks: accuracy, fidelity, model-inversion
//! MSE, and transfer adversarial attacks with their success rates.

pub mod adversarial;
pub mod error;
pub mod inversion;
pub mod metrics;

pub use adversarial::{adversarial_transfer, AdvConfig};
pub use error::EvalError;
pub use inversion::{build_inverter, model_inversion, InverterSpec};
pub use metrics::{accuracy, fidelity, predictions, MetricsRecord};
