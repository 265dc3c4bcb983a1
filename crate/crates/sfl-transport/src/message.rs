//! The protocol vocabulary. By construction no variant carries logits,
//! probabilities or predicted labels: the only server-to-client payloads
//! are the synchronized client part and cut gradients.

use sfl_nn::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Hello { client: u32 },
    /// Client-part parameter tensors, flowing up (one client's copy) or
    /// down (the synchronized average).
    SyncModel { tensors: Vec<Tensor<f32>> },
    /// Cut activation and labels for one training step.
    Activation {
        client: u32,
        step: u64,
        activation: Tensor<f32>,
        labels: Vec<u32>,
    },
    /// The loss gradient at the cut, answering one Activation.
    Gradient { client: u32, step: u64, grad: Tensor<f32> },
    EndEpoch { epoch: u32 },
}
