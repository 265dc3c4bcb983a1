//! The model-extraction attack suite for gradient-query-only split
//! learning: Craft-ME, GAN-ME, GM-ME, Train-ME, SoftTrain-ME and the
//! naive re-training baseline, plus the shared surrogate training loop.

pub mod craft;
pub mod error;
pub mod gan;
pub mod gm;
pub mod oracle;
pub mod result;
pub mod soft;
pub mod surrogate;
pub mod train;

pub use craft::{craft_me_finetune, craft_offline, CraftConfig, CraftOutput, CraftPolicy, CraftState};
pub use error::AttackError;
pub use gan::{gan_me_finetune, gan_offline, GanConfig, GanOutput, GanPolicy, GanState, GeneratorModel};
pub use gm::{gm_fit, gm_me_finetune, gm_offline, GmConfig, GmOutput, GmPairs, GmPolicy};
pub use oracle::{per_sample, WhiteBoxEnv, ATTACKER_ID};
pub use result::AttackResult;
pub use soft::{compute_soft_labels, soft_offline, softtrain_me_finetune, SoftCollector, SoftConfig, SoftOutput, SoftPolicy};
pub use surrogate::{train_surrogate, variant_units, SoftTargets, SurrogateArchVariant, SurrogateModel, SurrogateTrainConfig};
pub use train::{naive_baseline, train_me, FullModel};
