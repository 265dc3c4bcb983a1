//! Client-side actors: benign data holders and the (at most one)
//! malicious participant driving an attack policy.

use sfl_data::{augment_batch, AugmentConfig, Dataset};
use sfl_nn::net::{backward, forward};
use sfl_nn::optim::{OptimKind, Optimizer, Schedule};
use sfl_nn::{ParamSet, Rng, Tensor, UnitSpec};
use sfl_transport::bus::ClientActor;
use sfl_transport::TransportError;

use crate::error::CoreError;
use crate::querylog::{GradientQueryRecord, QueryLog};
use crate::sync::{params_to_tensors, tensors_into_params};

#[derive(Debug, Clone)]
pub struct ClientOptConfig {
    pub lr: f64,
    pub momentum: f64,
    pub milestones: Vec<usize>,
    pub factor: f64,
}

impl ClientOptConfig {
    fn build(&self) -> Optimizer {
        Optimizer::new(
            OptimKind::sgd(self.lr, self.momentum),
            Schedule::new(self.milestones.clone(), self.factor),
        )
    }
}

/// Everything the attacker learns from one answered query.
#[derive(Debug, Clone)]
pub struct QueryFeedback {
    pub epoch: u32,
    pub step: u64,
    pub input: Tensor<f32>,
    pub labels: Vec<u32>,
    pub activation: Tensor<f32>,
    /// dLoss/dActivation as returned by the server (mean-over-batch).
    pub cut_grad: Tensor<f32>,
    /// dLoss/dInput, backpropagated through the white-box client part.
    pub input_grad: Tensor<f32>,
}

/// The attacker's online behavior: what to submit each step and how to
/// digest the answers. Offline surrogate building happens elsewhere.
pub trait AttackPolicy: Send {
    /// The malicious batch for this step, in input space.
    fn propose(&mut self, epoch: u32, step: u64) -> Result<(Tensor<f32>, Vec<u32>), CoreError>;
    /// Digest an answered query (only called inside the collection window
    /// and budget).
    fn observe(&mut self, feedback: QueryFeedback) -> Result<(), CoreError>;
    /// Recover the concrete policy after the run for its offline phase.
    fn into_any(self: Box<Self>) -> Box<dyn std::any::Any>;
}

fn l1_defense(grads: &mut ParamSet, params: &ParamSet, lambda: f64) {
    if lambda == 0.0 {
        return;
    }
    let lambda = lambda as f32;
    for (g, p) in grads.entries_mut().iter_mut().zip(params.entries()) {
        if let (Some(g), Some(p)) = (g.as_mut(), p.as_ref()) {
            // Weights only; biases are not penalized. sign(0) contributes
            // nothing.
            for (gv, &wv) in g.weight.data_mut().iter_mut().zip(p.weight.data()) {
                if wv != 0.0 {
                    *gv += lambda * wv.signum();
                }
            }
        }
    }
}

/// Shared mechanics of one client's half-model.
struct ClientCore {
    id: u32,
    units: Vec<UnitSpec>,
    params: ParamSet,
    optimizer: Optimizer,
    cache: Option<Vec<Tensor<f32>>>,
    cur_epoch: Option<u32>,
}

impl ClientCore {
    fn begin_epoch_if_new(&mut self, epoch: u32) -> bool {
        if self.cur_epoch != Some(epoch) {
            self.cur_epoch = Some(epoch);
            self.optimizer.advance_epoch(epoch as usize);
            true
        } else {
            false
        }
    }

    fn forward(&mut self, x: &Tensor<f32>) -> Result<Tensor<f32>, CoreError> {
        let acts = forward(&self.units, &self.params, x)?;
        let a = acts.last().unwrap().clone();
        self.cache = Some(acts);
        Ok(a)
    }

    /// Local backward + update; returns the input gradient.
    fn backward_update(
        &mut self,
        grad: &Tensor<f32>,
        l1_lambda: f64,
    ) -> Result<Tensor<f32>, CoreError> {
        let acts = self
            .cache
            .take()
            .ok_or_else(|| CoreError::QueryLog("gradient without pending activation".into()))?;
        let (mut param_grads, input_grad) = backward(&self.units, &self.params, &acts, grad)?;
        l1_defense(&mut param_grads, &self.params, l1_lambda);
        self.optimizer.step(&mut self.params, &param_grads);
        Ok(input_grad)
    }
}

/// An honest participant training on its own shard.
pub struct BenignClient {
    core: ClientCore,
    shard: Dataset,
    order: Vec<usize>,
    pos: usize,
    batch_size: usize,
    augment: Option<AugmentConfig>,
    defense_l1: f64,
    rng: Rng,
}

impl BenignClient {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        id: u32,
        units: Vec<UnitSpec>,
        params: ParamSet,
        opt: &ClientOptConfig,
        shard: Dataset,
        batch_size: usize,
        augment: Option<AugmentConfig>,
        defense_l1: f64,
        rng: Rng,
    ) -> Self {
        BenignClient {
            core: ClientCore {
                id,
                units,
                params,
                optimizer: opt.build(),
                cache: None,
                cur_epoch: None,
            },
            order: (0..shard.len()).collect(),
            shard,
            pos: 0,
            batch_size,
            augment,
            defense_l1,
            rng,
        }
    }

    pub fn params(&self) -> &ParamSet {
        &self.core.params
    }

    fn next_batch(&mut self, epoch: u32, step: u64) -> (Tensor<f32>, Vec<usize>) {
        if self.pos + self.batch_size > self.order.len() {
            self.pos = 0;
        }
        let indices = &self.order[self.pos..self.pos + self.batch_size.min(self.order.len())];
        let picked = self.shard.select(indices);
        self.pos += self.batch_size;
        let (mut x, y) = picked.batch(0, picked.len());
        if let Some(cfg) = &self.augment {
            let mut aug_rng = self.rng.stream(&format!("aug/e{epoch}/s{step}"));
            x = augment_batch(&x, cfg, &mut aug_rng);
        }
        (x, y)
    }
}

impl ClientActor for BenignClient {
    fn id(&self) -> u32 {
        self.core.id
    }

    fn upload_model(&self) -> Vec<Tensor<f32>> {
        params_to_tensors(&self.core.params)
    }

    fn download_model(&mut self, tensors: &[Tensor<f32>]) -> Result<(), TransportError> {
        tensors_into_params(tensors, &mut self.core.params).map_err(TransportError::from)
    }

    fn produce_activation(
        &mut self,
        epoch: u32,
        step: u64,
    ) -> Result<(Tensor<f32>, Vec<u32>), TransportError> {
        if self.core.begin_epoch_if_new(epoch) {
            let mut shuffle_rng = self.rng.stream(&format!("shuffle/e{epoch}"));
            shuffle_rng.shuffle(&mut self.order);
            self.pos = 0;
        }
        let (x, y) = self.next_batch(epoch, step);
        let a = self.core.forward(&x).map_err(TransportError::from)?;
        Ok((a, y.iter().map(|&l| l as u32).collect()))
    }

    fn apply_gradient(
        &mut self,
        _epoch: u32,
        _step: u64,
        grad: &Tensor<f32>,
    ) -> Result<(), TransportError> {
        self.core
            .backward_update(grad, self.defense_l1)
            .map(|_| ())
            .map_err(TransportError::from)
    }
}

/// The attacker: a full protocol participant whose batches come from an
/// attack policy. It updates and synchronizes its client part like anyone
/// else; inside the collection window it buffers the answered queries.
pub struct MaliciousClient {
    core: ClientCore,
    policy: Box<dyn AttackPolicy>,
    launch_epoch: u32,
    budget: u64,
    collected: u64,
    pending: Option<(Tensor<f32>, Vec<u32>)>,
    pub log: QueryLog,
}

impl MaliciousClient {
    pub fn new(
        id: u32,
        units: Vec<UnitSpec>,
        params: ParamSet,
        opt: &ClientOptConfig,
        policy: Box<dyn AttackPolicy>,
        launch_epoch: u32,
        budget: u64,
    ) -> Self {
        MaliciousClient {
            core: ClientCore {
                id,
                units,
                params,
                optimizer: opt.build(),
                cache: None,
                cur_epoch: None,
            },
            policy,
            launch_epoch,
            budget,
            collected: 0,
            pending: None,
            log: QueryLog::default(),
        }
    }

    pub fn params(&self) -> &ParamSet {
        &self.core.params
    }

    pub fn into_parts(self) -> (ParamSet, QueryLog, Box<dyn AttackPolicy>, u64) {
        (self.core.params, self.log, self.policy, self.collected)
    }

    fn collecting(&self, epoch: u32, batch: u64) -> bool {
        epoch >= self.launch_epoch && self.collected + batch <= self.budget
    }
}

impl ClientActor for MaliciousClient {
    fn id(&self) -> u32 {
        self.core.id
    }

    fn upload_model(&self) -> Vec<Tensor<f32>> {
        params_to_tensors(&self.core.params)
    }

    fn download_model(&mut self, tensors: &[Tensor<f32>]) -> Result<(), TransportError> {
        tensors_into_params(tensors, &mut self.core.params).map_err(TransportError::from)
    }

    fn produce_activation(
        &mut self,
        epoch: u32,
        step: u64,
    ) -> Result<(Tensor<f32>, Vec<u32>), TransportError> {
        self.core.begin_epoch_if_new(epoch);
        let (x, y) = self.policy.propose(epoch, step).map_err(TransportError::from)?;
        let a = self.core.forward(&x).map_err(TransportError::from)?;
        self.pending = Some((x, y.clone()));
        Ok((a, y))
    }

    fn apply_gradient(
        &mut self,
        epoch: u32,
        step: u64,
        grad: &Tensor<f32>,
    ) -> Result<(), TransportError> {
        let activation = self
            .core
            .cache
            .as_ref()
            .map(|acts| acts.last().unwrap().clone());
        // Protocol-compliant local update, defense-free: the attacker does
        // not regularize itself.
        let input_grad = self
            .core
            .backward_update(grad, 0.0)
            .map_err(TransportError::from)?;
        let (input, labels) = self.pending.take().ok_or_else(|| {
            TransportError::Protocol("gradient without pending malicious batch".into())
        })?;
        let batch = input.dims()[0] as u64;
        if self.collecting(epoch, batch) {
            self.collected += batch;
            let activation = activation.expect("cache present before backward");
            self.log.push(GradientQueryRecord {
                client: self.core.id,
                step,
                epoch,
                activation: activation.clone(),
                labels: labels.clone(),
                grad: grad.clone(),
            });
            self.policy
                .observe(QueryFeedback {
                    epoch,
                    step,
                    input,
                    labels,
                    activation,
                    cut_grad: grad.clone(),
                    input_grad,
                })
                .map_err(TransportError::from)?;
        }
        Ok(())
    }
}
