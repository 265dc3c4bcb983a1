//! Craft-ME: descend random inputs toward small loss under cycling class
//! labels, then distill a surrogate from the crafted instances.

use sfl_core::{AttackPolicy, CoreError, QueryFeedback, SplitModel};
use sfl_data::{uniform_noise_images, Dataset};
use sfl_nn::{Rng, Tensor};

use crate::error::AttackError;
use crate::oracle::{per_sample, WhiteBoxEnv};
use crate::surrogate::{train_surrogate, SurrogateModel, SurrogateTrainConfig};

#[derive(Debug, Clone)]
pub struct CraftConfig {
    pub budget: u64,
    /// Input-space updates per instance.
    pub steps: u32,
    pub batch: usize,
    pub adam_lr: f64,
}

impl Default for CraftConfig {
    fn default() -> Self {
        CraftConfig { budget: 10_000, steps: 20, batch: 64, adam_lr: 0.1 }
    }
}

struct CurrentBatch {
    x: Tensor<f32>,
    labels: Vec<u32>,
    m: Vec<f32>,
    v: Vec<f32>,
    t: u32,
}

/// The crafting state machine, shared by the fine-tuning driver and the
/// from-scratch policy. A proposed noise batch becomes "current" on its
/// first answered query; `steps` answers later it is banked.
pub struct CraftState {
    cfg: CraftConfig,
    classes: usize,
    dims: Vec<usize>,
    quota: u64,
    banked: u64,
    next_class: usize,
    current: Option<CurrentBatch>,
    candidate: Option<(Tensor<f32>, Vec<u32>)>,
    images: Vec<f32>,
    labels: Vec<u32>,
    rng: Rng,
}

impl CraftState {
    pub fn new(cfg: CraftConfig, classes: usize, dims: Vec<usize>, rng: Rng) -> Result<Self, AttackError> {
        if cfg.budget < u64::from(cfg.steps) {
            return Err(AttackError::BudgetTooSmall { budget: cfg.budget, steps: cfg.steps });
        }
        let quota = cfg.budget / u64::from(cfg.steps);
        Ok(CraftState {
            cfg,
            classes,
            dims,
            quota,
            banked: 0,
            next_class: 0,
            current: None,
            candidate: None,
            images: Vec::new(),
            labels: Vec::new(),
            rng,
        })
    }

    pub fn done(&self) -> bool {
        self.banked >= self.quota && self.current.is_none()
    }

    pub fn crafted(&self) -> u64 {
        self.banked
    }

    /// The batch to submit this step: the batch being refined, or a fresh
    /// noise candidate (also used pre-launch, when answers are ignored).
    pub fn propose(&mut self) -> (Tensor<f32>, Vec<u32>) {
        if let Some(cur) = &self.current {
            return (cur.x.clone(), cur.labels.clone());
        }
        let remaining = self.quota - self.banked;
        let size = (self.cfg.batch as u64).min(remaining.max(1)) as usize;
        let x = uniform_noise_images(size, &self.dims, &mut self.rng);
        let labels: Vec<u32> = (0..size)
            .map(|i| ((self.next_class + i) % self.classes) as u32)
            .collect();
        self.candidate = Some((x.clone(), labels.clone()));
        (x, labels)
    }

    /// Digest the answered query: one Adam step on the images.
    pub fn observe(&mut self, input_grad_mean: &Tensor<f32>) {
        if self.current.is_none() {
            let Some((x, labels)) = self.candidate.take() else { return };
            if self.banked >= self.quota {
                return;
            }
            self.next_class = (self.next_class + labels.len()) % self.classes;
            let n = x.len();
            self.current = Some(CurrentBatch { x, labels, m: vec![0.0; n], v: vec![0.0; n], t: 0 });
        }
        let cur = self.current.as_mut().unwrap();
        let g = per_sample(input_grad_mean);
        cur.t += 1;
        let (b1, b2, eps) = (0.9f32, 0.999f32, 1e-8f32);
        let c1 = 1.0 - b1.powi(cur.t as i32);
        let c2 = 1.0 - b2.powi(cur.t as i32);
        let lr = self.cfg.adam_lr as f32;
        for ((xv, &gv), (m, v)) in cur
            .x
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(cur.m.iter_mut().zip(cur.v.iter_mut()))
        {
            *m = b1 * *m + (1.0 - b1) * gv;
            *v = b2 * *v + (1.0 - b2) * gv * gv;
            let step = lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            *xv = (*xv - step).clamp(0.0, 1.0);
        }
        if cur.t >= self.cfg.steps {
            let cur = self.current.take().unwrap();
            self.images.extend_from_slice(cur.x.data());
            self.labels.extend_from_slice(&cur.labels);
            self.banked += cur.labels.len() as u64;
        }
    }

    /// The crafted small-loss instances.
    pub fn into_dataset(self) -> Result<Dataset, AttackError> {
        if self.labels.is_empty() {
            return Err(AttackError::EmptyDataset);
        }
        let mut dims = vec![self.labels.len()];
        dims.extend_from_slice(&self.dims);
        let images = Tensor::new(dims, self.images).map_err(AttackError::Nn)?;
        Ok(Dataset::new(images, self.labels, self.classes).map_err(CoreError::Data)?)
    }
}

/// From-scratch policy: refine crafting inside the collection window, emit
/// fresh noise elsewhere.
pub struct CraftPolicy {
    pub state: CraftState,
}

impl AttackPolicy for CraftPolicy {
    fn propose(&mut self, _epoch: u32, _step: u64) -> Result<(Tensor<f32>, Vec<u32>), CoreError> {
        Ok(self.state.propose())
    }

    fn observe(&mut self, feedback: QueryFeedback) -> Result<(), CoreError> {
        self.state.observe(&feedback.input_grad);
        Ok(())
    }

    fn into_any(self: Box<Self>) -> Box<dyn std::any::Any> {
        self
    }
}

pub struct CraftOutput {
    pub crafted: Dataset,
    pub surrogate: SurrogateModel,
    pub queries_used: u64,
    pub log: sfl_core::QueryLog,
}

/// The fine-tuning form: craft against the frozen victim, then train the
/// surrogate on the crafted set.
pub fn craft_me_finetune(
    victim: &SplitModel,
    input_dims: &[usize],
    classes: usize,
    cfg: CraftConfig,
    surrogate_cfg: &SurrogateTrainConfig,
    rng: &Rng,
) -> Result<CraftOutput, AttackError> {
    let mut env = WhiteBoxEnv::new(victim, cfg.budget);
    let mut state = CraftState::new(cfg, classes, input_dims.to_vec(), rng.stream("craft"))?;
    while !state.done() {
        let (x, y) = state.propose();
        if !env.can_afford(x.dims()[0]) {
            break;
        }
        let fb = env.query(&x, &y)?;
        state.observe(&fb.input_grad);
    }
    let queries_used = env.used();
    let crafted = state.into_dataset()?;
    let surrogate = SurrogateModel::from_victim(victim, input_dims, surrogate_cfg.variant, rng)?;
    let surrogate = train_surrogate(surrogate, &crafted, None, surrogate_cfg, rng)?;
    Ok(CraftOutput { crafted, surrogate, queries_used, log: env.log })
}

/// Offline phase for the from-scratch run: distill from whatever the
/// policy managed to craft during the window.
pub fn craft_offline(
    state: CraftState,
    victim: &SplitModel,
    input_dims: &[usize],
    surrogate_cfg: &SurrogateTrainConfig,
    rng: &Rng,
) -> Result<(Dataset, SurrogateModel), AttackError> {
    let crafted = state.into_dataset()?;
    let surrogate = SurrogateModel::from_victim(victim, input_dims, surrogate_cfg.variant, rng)?;
    let surrogate = train_surrogate(surrogate, &crafted, None, surrogate_cfg, rng)?;
    Ok((crafted, surrogate))
}
