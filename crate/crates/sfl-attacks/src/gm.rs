//! GM-ME: fit the surrogate server by matching the victim's cut gradients
//! over an auxiliary dataset, querying every class label per input. The
//! second-order engine path differentiates the matching objective.

use sfl_core::{AttackPolicy, CoreError, QueryFeedback, QueryLog, SplitModel};
use sfl_data::Dataset;
use sfl_nn::optim::{OptimKind, Optimizer, Schedule};
use sfl_nn::second_order::{gm_backward, GmTarget};
use sfl_nn::{Rng, Tensor};

use crate::error::AttackError;
use crate::oracle::WhiteBoxEnv;
use crate::surrogate::{SurrogateArchVariant, SurrogateModel};

#[derive(Debug, Clone)]
pub struct GmConfig {
    pub budget: u64,
    pub batch: usize,
    pub epochs: u32,
    pub lr: f64,
    pub momentum: f64,
    pub milestones: Vec<usize>,
    pub lr_factor: f64,
    /// Keep only gradients from the last K global steps (from-scratch runs).
    pub late_k: Option<usize>,
    pub variant: SurrogateArchVariant,
}

impl Default for GmConfig {
    fn default() -> Self {
        GmConfig {
            budget: 100_000,
            batch: 128,
            epochs: 60,
            lr: 0.02,
            momentum: 0.9,
            milestones: vec![30, 45],
            lr_factor: 0.2,
            late_k: None,
            variant: SurrogateArchVariant::Same,
        }
    }
}

/// (cut activation, label, per-sample victim gradient) triples.
pub struct GmPairs {
    pub activations: Vec<Tensor<f32>>,
    pub labels: Vec<usize>,
    pub grads: Vec<Tensor<f32>>,
    cut_dims: Vec<usize>,
}

impl GmPairs {
    /// Explode batched query records into per-sample pairs. Record grads
    /// carry the mean-over-batch convention, so rows scale back by B;
    /// the rescaling is exact when query batch sizes are powers of two.
    pub fn from_log(log: &QueryLog) -> Result<GmPairs, AttackError> {
        let mut pairs = GmPairs {
            activations: Vec::new(),
            labels: Vec::new(),
            grads: Vec::new(),
            cut_dims: Vec::new(),
        };
        for rec in &log.records {
            let b = rec.activation.dims()[0];
            let n: usize = rec.activation.dims()[1..].iter().product();
            let mut sample_dims = vec![1usize];
            sample_dims.extend_from_slice(&rec.activation.dims()[1..]);
            if pairs.cut_dims.is_empty() {
                pairs.cut_dims = sample_dims.clone();
            }
            for i in 0..b {
                let a = Tensor::new(
                    sample_dims.clone(),
                    rec.activation.data()[i * n..(i + 1) * n].to_vec(),
                )
                .map_err(AttackError::Nn)?;
                let g = Tensor::new(
                    sample_dims.clone(),
                    rec.grad.data()[i * n..(i + 1) * n]
                        .iter()
                        .map(|&v| v * b as f32)
                        .collect(),
                )
                .map_err(AttackError::Nn)?;
                pairs.activations.push(a);
                pairs.labels.push(rec.labels[i] as usize);
                pairs.grads.push(g);
            }
        }
        if pairs.labels.is_empty() {
            return Err(AttackError::EmptyDataset);
        }
        Ok(pairs)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn batch(&self, indices: &[usize]) -> (Tensor<f32>, Vec<usize>, Tensor<f32>) {
        let n: usize = self.cut_dims[1..].iter().product();
        let mut adata = Vec::with_capacity(indices.len() * n);
        let mut gdata = Vec::with_capacity(indices.len() * n);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            adata.extend_from_slice(self.activations[i].data());
            gdata.extend_from_slice(self.grads[i].data());
            labels.push(self.labels[i]);
        }
        let mut dims = vec![indices.len()];
        dims.extend_from_slice(&self.cut_dims[1..]);
        (
            Tensor::new(dims.clone(), adata).unwrap(),
            labels,
            Tensor::new(dims, gdata).unwrap(),
        )
    }
}

/// Minimize the gradient-matching objective over the surrogate server
/// parameters. Returns the trained surrogate and the final mean GM loss.
pub fn gm_fit(
    mut surrogate: SurrogateModel,
    pairs: &GmPairs,
    cfg: &GmConfig,
    rng: &Rng,
) -> Result<(SurrogateModel, f64), AttackError> {
    if pairs.is_empty() {
        return Err(AttackError::EmptyDataset);
    }
    let mut optimizer = Optimizer::new(
        OptimKind::sgd(cfg.lr, cfg.momentum),
        Schedule::new(cfg.milestones.clone(), cfg.lr_factor),
    );
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let fit_rng = rng.stream("gm-fit");
    let steps = (pairs.len() / cfg.batch).max(1);
    let mut last_mean_loss = f64::INFINITY;
    for epoch in 0..cfg.epochs {
        optimizer.advance_epoch(epoch as usize);
        let mut shuffle_rng = fit_rng.stream(&format!("shuffle/e{epoch}"));
        shuffle_rng.shuffle(&mut order);
        let mut pos = 0usize;
        let mut loss_sum = 0.0f64;
        let mut seen = 0usize;
        for _ in 0..steps {
            if pos + cfg.batch > order.len() {
                pos = 0;
            }
            let indices = &order[pos..pos + cfg.batch.min(order.len())];
            pos += cfg.batch;
            let (a, y, g) = pairs.batch(indices);
            let out = gm_backward(
                &surrogate.server_units,
                &surrogate.server,
                &a,
                &GmTarget::Classes(y),
                &g,
            )?;
            if !out.loss.is_finite() {
                return Err(AttackError::Core(CoreError::Diverged {
                    epoch,
                    loss: f64::from(out.loss),
                }));
            }
            loss_sum += f64::from(out.loss);
            seen += indices.len();
            let mut grads = out.param_grads;
            grads.scale_assign(1.0 / indices.len() as f32);
            optimizer.step(&mut surrogate.server, &grads);
        }
        last_mean_loss = loss_sum / seen as f64;
    }
    Ok((surrogate, last_mean_loss))
}

/// From-scratch policy: sweep the auxiliary set, one label per batch,
/// cycling labels across sweeps of each chunk.
pub struct GmPolicy {
    aux: Dataset,
    batch: usize,
    chunk_cursor: usize,
    label_cursor: usize,
}

impl GmPolicy {
    pub fn new(aux: Dataset, batch: usize) -> Result<Self, AttackError> {
        if aux.is_empty() {
            return Err(AttackError::EmptyDataset);
        }
        Ok(GmPolicy { aux, batch, chunk_cursor: 0, label_cursor: 0 })
    }

    fn current_batch(&self) -> (Tensor<f32>, Vec<u32>) {
        let start = self.chunk_cursor;
        let len = self.batch.min(self.aux.len() - start);
        let (x, _) = self.aux.batch(start, len);
        let labels = vec![self.label_cursor as u32; len];
        (x, labels)
    }

    fn advance(&mut self) {
        self.label_cursor += 1;
        if self.label_cursor >= self.aux.n_classes {
            self.label_cursor = 0;
            self.chunk_cursor += self.batch;
            if self.chunk_cursor >= self.aux.len() {
                self.chunk_cursor = 0;
            }
        }
    }
}

impl AttackPolicy for GmPolicy {
    fn propose(&mut self, _epoch: u32, _step: u64) -> Result<(Tensor<f32>, Vec<u32>), CoreError> {
        Ok(self.current_batch())
    }

    fn observe(&mut self, _feedback: QueryFeedback) -> Result<(), CoreError> {
        // The malicious client's log holds the records; just move on.
        self.advance();
        Ok(())
    }

    fn into_any(self: Box<Self>) -> Box<dyn std::any::Any> {
        self
    }
}

pub struct GmOutput {
    pub surrogate: SurrogateModel,
    pub final_gm_loss: f64,
    pub queries_used: u64,
    pub log: QueryLog,
}

/// Fine-tuning form: query each auxiliary input under every label, then
/// fit the surrogate server on the collected pairs.
pub fn gm_me_finetune(
    victim: &SplitModel,
    aux: &Dataset,
    input_dims: &[usize],
    cfg: GmConfig,
    rng: &Rng,
) -> Result<GmOutput, AttackError> {
    if aux.is_empty() {
        return Err(AttackError::EmptyDataset);
    }
    let mut env = WhiteBoxEnv::new(victim, cfg.budget);
    let classes = aux.n_classes;
    'outer: for start in (0..aux.len()).step_by(cfg.batch.max(1)) {
        let len = cfg.batch.min(aux.len() - start);
        let (x, _) = aux.batch(start, len);
        for label in 0..classes {
            if !env.can_afford(len) {
                break 'outer;
            }
            env.query(&x, &vec![label as u32; len])?;
        }
    }
    let queries_used = env.used();
    let log = env.log;
    let filtered = match cfg.late_k {
        Some(k) => log.late_k(k),
        None => log.clone(),
    };
    let pairs = GmPairs::from_log(&filtered)?;
    let surrogate = SurrogateModel::from_victim(victim, input_dims, cfg.variant, rng)?;
    let (surrogate, final_gm_loss) = gm_fit(surrogate, &pairs, &cfg, rng)?;
    Ok(GmOutput { surrogate, final_gm_loss, queries_used, log })
}

/// Offline phase for from-scratch runs, from the malicious client's log.
pub fn gm_offline(
    log: &QueryLog,
    victim: &SplitModel,
    input_dims: &[usize],
    cfg: &GmConfig,
    rng: &Rng,
) -> Result<SurrogateModel, AttackError> {
    let filtered = match cfg.late_k {
        Some(k) => log.late_k(k),
        None => log.clone(),
    };
    let pairs = GmPairs::from_log(&filtered)?;
    let surrogate = SurrogateModel::from_victim(victim, input_dims, cfg.variant, rng)?;
    Ok(gm_fit(surrogate, &pairs, cfg, rng)?.0)
}
