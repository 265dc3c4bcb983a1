//! The surrogate model and its shared training loop. The client part is
//! always the white-box victim client weights, frozen; only the server
//! part (possibly of a variant architecture) trains.

use sfl_core::{Classifier, CoreError, SplitModel};
use sfl_data::{augment_batch, AugmentConfig, Dataset};
use sfl_nn::loss::{cross_entropy_hard, cross_entropy_soft};
use sfl_nn::net::{backward, forward, forward_logits};
use sfl_nn::optim::{OptimKind, Optimizer, Schedule};
use sfl_nn::unit::chain_shapes;
use sfl_nn::{ParamSet, Rng, Tensor, UnitSpec};

use crate::error::AttackError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SurrogateArchVariant {
    #[default]
    Same,
    /// One extra fully connected unit before the classifier head.
    Longer,
    /// One fully connected unit fewer.
    Shorter,
    /// Channel/feature widths doubled.
    Wider,
    /// Channel/feature widths halved.
    Thinner,
}

fn scale_width(w: usize, mult: f64) -> usize {
    ((w as f64 * mult).round() as usize).max(1)
}

/// Derive the surrogate server architecture from the true one.
pub fn variant_units(
    server_units: &[UnitSpec],
    cut_shape: &[usize],
    variant: SurrogateArchVariant,
) -> Result<Vec<UnitSpec>, AttackError> {
    let built: Vec<UnitSpec> = match variant {
        SurrogateArchVariant::Same => server_units.to_vec(),
        SurrogateArchVariant::Longer => {
            let last_linear = server_units
                .iter()
                .rposition(|u| matches!(u, UnitSpec::Linear { .. }))
                .ok_or_else(|| AttackError::Variant("no fully connected unit to extend".into()))?;
            let UnitSpec::Linear { inputs, .. } = server_units[last_linear] else {
                unreachable!()
            };
            let mut out = server_units.to_vec();
            out.insert(last_linear, UnitSpec::Linear { inputs, outputs: inputs });
            out
        }
        SurrogateArchVariant::Shorter => {
            let linears: Vec<usize> = server_units
                .iter()
                .enumerate()
                .filter(|(_, u)| matches!(u, UnitSpec::Linear { .. }))
                .map(|(i, _)| i)
                .collect();
            if linears.len() < 2 {
                return Err(AttackError::Variant(
                    "need >= 2 fully connected units to drop one".into(),
                ));
            }
            let drop = linears[0];
            let UnitSpec::Linear { inputs: dropped_in, .. } = server_units[drop] else {
                unreachable!()
            };
            let mut out = server_units.to_vec();
            out.remove(drop);
            let next = linears[1] - 1;
            let UnitSpec::Linear { outputs, .. } = out[next] else { unreachable!() };
            out[next] = UnitSpec::Linear { inputs: dropped_in, outputs };
            out
        }
        SurrogateArchVariant::Wider | SurrogateArchVariant::Thinner => {
            let mult = if variant == SurrogateArchVariant::Wider { 2.0 } else { 0.5 };
            let last_param = server_units
                .iter()
                .rposition(UnitSpec::has_params)
                .ok_or_else(|| AttackError::Variant("no parameterized units".into()))?;
            let mut shape = cut_shape.to_vec();
            let mut out = Vec::with_capacity(server_units.len());
            for (i, u) in server_units.iter().enumerate() {
                let new_unit = match *u {
                    UnitSpec::Conv2d { out_ch, kernel, stride, pad, .. } => UnitSpec::Conv2d {
                        in_ch: shape[0],
                        out_ch: if i == last_param { out_ch } else { scale_width(out_ch, mult) },
                        kernel,
                        stride,
                        pad,
                    },
                    UnitSpec::Linear { outputs, .. } => UnitSpec::Linear {
                        inputs: shape[0],
                        outputs: if i == last_param { outputs } else { scale_width(outputs, mult) },
                    },
                    other => other,
                };
                shape = new_unit
                    .infer_output(i, &shape)
                    .map_err(AttackError::Nn)?;
                out.push(new_unit);
            }
            out
        }
    };
    chain_shapes(&built, cut_shape).map_err(AttackError::Nn)?;
    Ok(built)
}

/// Client part frozen at victim weights; server part owned and trainable.
#[derive(Debug, Clone)]
pub struct SurrogateModel {
    pub client_units: Vec<UnitSpec>,
    pub client: ParamSet,
    pub server_units: Vec<UnitSpec>,
    pub server: ParamSet,
}

impl SurrogateModel {
    /// White-box initialization: client part copied bit-for-bit from the
    /// victim; server part of the requested variant, randomly initialized.
    pub fn from_victim(
        victim: &SplitModel,
        input_shape: &[usize],
        variant: SurrogateArchVariant,
        rng: &Rng,
    ) -> Result<Self, AttackError> {
        let cut_shape = victim.cut_shape(input_shape)?;
        let server_units = variant_units(victim.server_units(), &cut_shape, variant)?;
        let server = sfl_nn::unit::init_params(&server_units, &rng.stream("surrogate-init"));
        Ok(SurrogateModel {
            client_units: victim.client_units().to_vec(),
            client: victim.client.clone(),
            server_units,
            server,
        })
    }

    pub fn client_forward(&self, x: &Tensor<f32>) -> Result<Tensor<f32>, CoreError> {
        Ok(forward_logits(&self.client_units, &self.client, x)?)
    }
}

impl Classifier for SurrogateModel {
    fn logits_of(&self, x: &Tensor<f32>) -> Result<Tensor<f32>, CoreError> {
        let a = forward_logits(&self.client_units, &self.client, x)?;
        Ok(forward_logits(&self.server_units, &self.server, &a)?)
    }
}

impl sfl_core::InputGradModel for SurrogateModel {
    fn input_gradient(&self, x: &Tensor<f32>, labels: &[usize]) -> Result<Tensor<f32>, CoreError> {
        let mut units = self.client_units.clone();
        units.extend_from_slice(&self.server_units);
        let mut entries = self.client.entries().to_vec();
        entries.extend_from_slice(self.server.entries());
        let params = ParamSet::from_entries(entries);
        let acts = forward(&units, &params, x)?;
        let (_, grad_logits) = cross_entropy_hard(acts.last().unwrap(), labels)?;
        let deltas = sfl_nn::net::input_deltas(&units, &params, &acts, &grad_logits)?;
        Ok(deltas.into_iter().next().unwrap())
    }
}

#[derive(Debug, Clone)]
pub struct SurrogateTrainConfig {
    pub epochs: u32,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub milestones: Vec<usize>,
    pub lr_factor: f64,
    pub augment: Option<AugmentConfig>,
    pub variant: SurrogateArchVariant,
}

impl Default for SurrogateTrainConfig {
    fn default() -> Self {
        SurrogateTrainConfig {
            epochs: 200,
            batch_size: 128,
            lr: 0.02,
            momentum: 0.9,
            milestones: vec![60, 120, 160],
            lr_factor: 0.2,
            augment: Some(AugmentConfig::default()),
            variant: SurrogateArchVariant::Same,
        }
    }
}

/// Per-sample soft target distributions aligned with a subset of samples.
#[derive(Debug, Clone)]
pub struct SoftTargets {
    /// (sample index into the training set, distribution over classes)
    pub entries: Vec<(usize, Vec<f32>)>,
    pub weight: f64,
}

/// Train the surrogate server part on (images, hard labels), optionally
/// plus a soft-label term. The client part never changes. Augmentation
/// applies to hard-label batches only.
pub fn train_surrogate(
    mut surrogate: SurrogateModel,
    data: &Dataset,
    soft: Option<&SoftTargets>,
    cfg: &SurrogateTrainConfig,
    rng: &Rng,
) -> Result<SurrogateModel, AttackError> {
    if data.is_empty() {
        return Err(AttackError::EmptyDataset);
    }
    let classes = data.n_classes;
    let mut optimizer = Optimizer::new(
        OptimKind::sgd(cfg.lr, cfg.momentum),
        Schedule::new(cfg.milestones.clone(), cfg.lr_factor),
    );
    let soft_map: Option<std::collections::HashMap<usize, &Vec<f32>>> =
        soft.map(|s| s.entries.iter().map(|(i, q)| (*i, q)).collect());
    let train_rng = rng.stream("surrogate-train");
    let mut order: Vec<usize> = (0..data.len()).collect();
    let steps = (data.len() / cfg.batch_size).max(1);
    for epoch in 0..cfg.epochs {
        optimizer.advance_epoch(epoch as usize);
        let mut shuffle_rng = train_rng.stream(&format!("shuffle/e{epoch}"));
        shuffle_rng.shuffle(&mut order);
        let mut pos = 0usize;
        for step in 0..steps {
            if pos + cfg.batch_size > order.len() {
                pos = 0;
            }
            let indices = &order[pos..pos + cfg.batch_size.min(order.len())];
            pos += cfg.batch_size;
            let picked = data.select(indices);
            let (raw_x, y) = picked.batch(0, picked.len());

            let mut hard_x = raw_x.clone();
            if let Some(aug) = &cfg.augment {
                let mut aug_rng = train_rng.stream(&format!("aug/e{epoch}/s{step}"));
                hard_x = augment_batch(&hard_x, aug, &mut aug_rng);
            }
            let a = forward_logits(&surrogate.client_units, &surrogate.client, &hard_x)?;
            let acts = forward(&surrogate.server_units, &surrogate.server, &a)?;
            let (loss, grad_logits) = cross_entropy_hard(acts.last().unwrap(), &y)?;
            if !loss.is_finite() {
                return Err(AttackError::Core(CoreError::Diverged {
                    epoch,
                    loss: f64::from(loss),
                }));
            }
            let (mut grads, _) =
                backward(&surrogate.server_units, &surrogate.server, &acts, &grad_logits)?;

            if let Some(map) = &soft_map {
                // Soft-label pass on the raw (never augmented) batch.
                let rows: Vec<(usize, &Vec<f32>)> = indices
                    .iter()
                    .enumerate()
                    .filter_map(|(row, idx)| map.get(idx).map(|q| (row, *q)))
                    .collect();
                if !rows.is_empty() {
                    let mut qdata = Vec::with_capacity(rows.len() * classes);
                    let sample_len: usize = data.sample_dims().iter().product();
                    let mut xdata = Vec::with_capacity(rows.len() * sample_len);
                    for (row, q) in &rows {
                        qdata.extend_from_slice(q);
                        xdata.extend_from_slice(
                            &raw_x.data()[row * sample_len..(row + 1) * sample_len],
                        );
                    }
                    let mut dims = vec![rows.len()];
                    dims.extend_from_slice(data.sample_dims());
                    let soft_x = Tensor::new(dims, xdata).unwrap();
                    let q = Tensor::new(vec![rows.len(), classes], qdata).unwrap();
                    let a2 =
                        forward_logits(&surrogate.client_units, &surrogate.client, &soft_x)?;
                    let acts2 = forward(&surrogate.server_units, &surrogate.server, &a2)?;
                    let (_, soft_grad) = cross_entropy_soft(acts2.last().unwrap(), &q)?;
                    let (soft_grads, _) = backward(
                        &surrogate.server_units,
                        &surrogate.server,
                        &acts2,
                        &soft_grad,
                    )?;
                    let w = soft.unwrap().weight as f32;
                    let mut weighted = soft_grads;
                    weighted.scale_assign(w);
                    grads.add_assign(&weighted);
                }
            }
            optimizer.step(&mut surrogate.server, &grads);
        }
    }
    Ok(surrogate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use sfl_core::desk_units;

    fn victim(n: usize) -> SplitModel {
        SplitModel::init(desk_units(1, 8, 8, 10), n, &Rng::from_seed(9)).unwrap()
    }

    #[test]
    fn wider_doubles_internal_widths() {
        let v = victim(3);
        let units = variant_units(v.server_units(), &[96], SurrogateArchVariant::Wider).unwrap();
        assert_eq!(
            units,
            vec![
                UnitSpec::Linear { inputs: 96, outputs: 64 },
                UnitSpec::ReLU,
                UnitSpec::Linear { inputs: 64, outputs: 10 },
            ]
        );
        let thin = variant_units(v.server_units(), &[96], SurrogateArchVariant::Thinner).unwrap();
        assert_eq!(
            thin,
            vec![
                UnitSpec::Linear { inputs: 96, outputs: 16 },
                UnitSpec::ReLU,
                UnitSpec::Linear { inputs: 16, outputs: 10 },
            ]
        );
    }

    #[test]
    fn longer_adds_and_shorter_removes_a_linear() {
        let v = victim(3);
        let longer = variant_units(v.server_units(), &[96], SurrogateArchVariant::Longer).unwrap();
        assert_eq!(longer.len(), 4);
        assert_eq!(longer[2], UnitSpec::Linear { inputs: 32, outputs: 32 });
        let shorter =
            variant_units(v.server_units(), &[96], SurrogateArchVariant::Shorter).unwrap();
        assert_eq!(
            shorter,
            vec![UnitSpec::ReLU, UnitSpec::Linear { inputs: 96, outputs: 10 }]
        );
    }

    #[test]
    fn shorter_needs_two_linears() {
        let v = victim(1);
        assert!(variant_units(v.server_units(), &[32], SurrogateArchVariant::Shorter).is_err());
    }

    #[test]
    fn white_box_client_is_bit_equal_and_stays_frozen() {
        let v = victim(3);
        let s = SurrogateModel::from_victim(&v, &[1, 8, 8], SurrogateArchVariant::Same,
                                            &Rng::from_seed(1)).unwrap();
        assert_eq!(s.client, v.client);
        let data = sfl_data::synthesize(&sfl_data::SyntheticSpec::desk(10, 64, 3));
        let cfg = SurrogateTrainConfig {
            epochs: 2,
            batch_size: 32,
            milestones: vec![],
            ..Default::default()
        };
        let trained = train_surrogate(s, &data, None, &cfg, &Rng::from_seed(2)).unwrap();
        assert_eq!(trained.client, v.client);
        assert_ne!(trained.server, v.server);
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let v = victim(1);
        let s = SurrogateModel::from_victim(&v, &[1, 8, 8], SurrogateArchVariant::Same,
                                            &Rng::from_seed(1)).unwrap();
        let empty = Dataset::new(Tensor::zeros(vec![0, 1, 8, 8]), vec![], 10).unwrap();
        assert!(matches!(
            train_surrogate(s, &empty, None, &SurrogateTrainConfig::default(), &Rng::from_seed(0)),
            Err(AttackError::EmptyDataset)
        ));
    }
}
