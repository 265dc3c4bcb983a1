//! Train-ME (supervised distillation from the white-box client part, zero
//! queries) and the naive baseline that ignores both the white-box weights
//! and the gradient API.

use sfl_core::{centralized_train, CentralizedSetup, Classifier, CoreError, SplitModel};
use sfl_data::Dataset;
use sfl_nn::{ParamSet, Rng, Tensor, UnitSpec};

use crate::error::AttackError;
use crate::surrogate::{train_surrogate, SurrogateModel, SurrogateTrainConfig};

/// Train-ME: surrogate server trained with plain cross-entropy on the
/// attacker's labeled subset. Consumes no gradient queries.
pub fn train_me(
    victim: &SplitModel,
    subset: &Dataset,
    surrogate_cfg: &SurrogateTrainConfig,
    rng: &Rng,
) -> Result<SurrogateModel, AttackError> {
    if subset.is_empty() {
        return Err(AttackError::EmptyDataset);
    }
    let surrogate = SurrogateModel::from_victim(
        victim,
        &subset.sample_dims().to_vec(),
        surrogate_cfg.variant,
        rng,
    )?;
    train_surrogate(surrogate, subset, None, surrogate_cfg, rng)
}

/// A full re-trained chain (no split, no victim weights).
#[derive(Debug, Clone)]
pub struct FullModel {
    pub units: Vec<UnitSpec>,
    pub params: ParamSet,
}

impl Classifier for FullModel {
    fn logits_of(&self, x: &Tensor<f32>) -> Result<Tensor<f32>, CoreError> {
        sfl_core::model_logits(&self.units, &self.params, x)
    }
}

impl sfl_core::InputGradModel for FullModel {
    fn input_gradient(&self, x: &Tensor<f32>, labels: &[usize]) -> Result<Tensor<f32>, CoreError> {
        let acts = sfl_nn::net::forward(&self.units, &self.params, x).map_err(CoreError::Nn)?;
        let (_, grad_logits) =
            sfl_nn::loss::cross_entropy_hard(acts.last().unwrap(), labels).map_err(CoreError::Nn)?;
        let deltas = sfl_nn::net::input_deltas(&self.units, &self.params, &acts, &grad_logits)
            .map_err(CoreError::Nn)?;
        Ok(deltas.into_iter().next().unwrap())
    }
}

/// Naive baseline: train the entire architecture from random init on the
/// subset, same optimizer settings as Train-ME. All units trainable.
pub fn naive_baseline(
    victim_units: &[UnitSpec],
    subset: &Dataset,
    surrogate_cfg: &SurrogateTrainConfig,
    rng: &Rng,
) -> Result<FullModel, AttackError> {
    if subset.is_empty() {
        return Err(AttackError::EmptyDataset);
    }
    let setup = CentralizedSetup {
        units: victim_units.to_vec(),
        epochs: surrogate_cfg.epochs,
        batch_size: surrogate_cfg.batch_size,
        lr: surrogate_cfg.lr,
        momentum: surrogate_cfg.momentum,
        milestones: surrogate_cfg.milestones.clone(),
        lr_factor: surrogate_cfg.lr_factor,
        defense_l1: 0.0,
        defense_cut: 0,
        augment: surrogate_cfg.augment,
        pretrained: None,
    };
    let (params, _) = centralized_train(setup, subset, &rng.stream("naive"))?;
    Ok(FullModel { units: victim_units.to_vec(), params })
}

#[cfg(test)]
mod tests {
    use super::*;
    use sfl_core::desk_units;
    use sfl_data::{synthesize, SyntheticSpec};

    #[test]
    fn naive_ignores_victim_weights() {
        let units = desk_units(1, 8, 8, 10);
        let victim = SplitModel::init(units.clone(), 3, &Rng::from_seed(1)).unwrap();
        let subset = synthesize(&SyntheticSpec::desk(10, 64, 2));
        let cfg = SurrogateTrainConfig { epochs: 1, batch_size: 32, milestones: vec![], ..Default::default() };
        let naive = naive_baseline(&units, &subset, &cfg, &Rng::from_seed(3)).unwrap();
        // All units trainable and present.
        assert_eq!(naive.units.len(), units.len());
        // Client-side weights differ from the victim's (random init).
        let victim_full = victim.merged_params();
        assert_ne!(
            naive.params.get(0).unwrap().weight,
            victim_full.get(0).unwrap().weight
        );
    }

    #[test]
    fn train_me_keeps_victim_client_bitwise() {
        let victim = SplitModel::init(desk_units(1, 8, 8, 10), 2, &Rng::from_seed(4)).unwrap();
        let subset = synthesize(&SyntheticSpec::desk(10, 64, 5));
        let cfg = SurrogateTrainConfig { epochs: 1, batch_size: 32, milestones: vec![], ..Default::default() };
        let s = train_me(&victim, &subset, &cfg, &Rng::from_seed(6)).unwrap();
        assert_eq!(s.client, victim.client);
    }
}
