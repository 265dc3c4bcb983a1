//! GAN-ME: a conditional generator trained purely from gradient queries to
//! emit small-loss instances, with a distance-aware diversity term against
//! mode collapse. No min-max game: the generator just descends the victim
//! loss of its outputs.

use sfl_core::{AttackPolicy, CoreError, QueryFeedback, SplitModel};
use sfl_data::Dataset;
use sfl_nn::gen::{GenLayer, GenNet};
use sfl_nn::optim::{OptimKind, Optimizer, Schedule};
use sfl_nn::{Rng, Tensor};

use crate::error::AttackError;
use crate::oracle::{per_sample, WhiteBoxEnv};
use crate::surrogate::{train_surrogate, SurrogateModel, SurrogateTrainConfig};

#[derive(Debug, Clone)]
pub struct GanConfig {
    pub budget: u64,
    pub batch: usize,
    pub latent_dim: usize,
    /// Weight of the diversity (anti-collapse) term.
    pub div_weight: f64,
    /// Per-pair cap on the distance ratio before its gradient switches off.
    pub div_cap: f64,
    pub adam_lr: f64,
    /// Size of the synthetic set sampled for surrogate training.
    pub synth_count: usize,
}

impl Default for GanConfig {
    fn default() -> Self {
        GanConfig {
            budget: 30_000,
            batch: 64,
            latent_dim: 64,
            div_weight: 50.0,
            div_cap: 1.0,
            adam_lr: 1e-4,
            synth_count: 2000,
        }
    }
}

/// Conditional generator G(z|c): latent concatenated with a one-hot class
/// code, one dense projection, two transposed-conv upsampling stages, and
/// a sigmoid squashing the output into [0,1].
#[derive(Debug, Clone)]
pub struct GeneratorModel {
    pub net: GenNet<f32>,
    pub latent_dim: usize,
    pub classes: usize,
    pub out_dims: Vec<usize>,
}

impl GeneratorModel {
    pub fn build(
        classes: usize,
        latent_dim: usize,
        out_dims: &[usize],
        rng: &Rng,
    ) -> Result<Self, AttackError> {
        let [c, h, w] = *out_dims else {
            return Err(AttackError::Variant(format!(
                "generator output must be (C,H,W), got {out_dims:?}"
            )));
        };
        if h % 4 != 0 || w % 4 != 0 {
            return Err(AttackError::Variant(format!(
                "generator upsamples twice; {h}x{w} must be divisible by 4"
            )));
        }
        let (h0, w0) = (h / 4, w / 4);
        let ch0 = 32;
        let layers = vec![
            GenLayer::Dense { inputs: latent_dim + classes, outputs: ch0 * h0 * w0 },
            GenLayer::ReLU,
            GenLayer::Reshape(vec![ch0, h0, w0]),
            GenLayer::TConv2d { in_ch: ch0, out_ch: 16, kernel: 4, stride: 2, pad: 1 },
            GenLayer::ReLU,
            GenLayer::TConv2d { in_ch: 16, out_ch: c, kernel: 4, stride: 2, pad: 1 },
            GenLayer::Sigmoid,
        ];
        Ok(GeneratorModel {
            net: GenNet::init(layers, &rng.stream("generator")),
            latent_dim,
            classes,
            out_dims: out_dims.to_vec(),
        })
    }

    fn encode(&self, z: &[f32], labels: &[u32]) -> Tensor<f32> {
        let batch = labels.len();
        let width = self.latent_dim + self.classes;
        let mut data = vec![0.0f32; batch * width];
        for i in 0..batch {
            data[i * width..i * width + self.latent_dim]
                .copy_from_slice(&z[i * self.latent_dim..(i + 1) * self.latent_dim]);
            data[i * width + self.latent_dim + labels[i] as usize] = 1.0;
        }
        Tensor::new(vec![batch, width], data).unwrap()
    }

    pub fn sample_latent(&self, batch: usize, rng: &mut Rng) -> Vec<f32> {
        (0..batch * self.latent_dim)
            .map(|_| rng.gaussian_f64() as f32)
            .collect()
    }

    /// Generate images for (z, c); outputs lie in [0,1] by construction.
    pub fn generate(&self, z: &[f32], labels: &[u32]) -> Result<Tensor<f32>, AttackError> {
        let input = self.encode(z, labels);
        Ok(self.net.output(&input)?)
    }
}

/// Online generator training state.
pub struct GanState {
    pub gen: GeneratorModel,
    cfg: GanConfig,
    optimizer: Optimizer,
    rng: Rng,
    last: Option<(Vec<f32>, Vec<u32>)>,
    next_class: usize,
    pub observed: u64,
}

impl GanState {
    pub fn new(gen: GeneratorModel, cfg: GanConfig, rng: Rng) -> Self {
        let optimizer = Optimizer::new(OptimKind::adam(cfg.adam_lr), Schedule::default());
        GanState { gen, cfg, optimizer, rng, last: None, next_class: 0, observed: 0 }
    }

    pub fn propose(&mut self) -> Result<(Tensor<f32>, Vec<u32>), AttackError> {
        let batch = self.cfg.batch;
        let z = self.gen.sample_latent(batch, &mut self.rng);
        let labels: Vec<u32> = (0..batch)
            .map(|i| ((self.next_class + i) % self.gen.classes) as u32)
            .collect();
        let x = self.gen.generate(&z, &labels)?;
        self.last = Some((z, labels.clone()));
        Ok((x, labels))
    }

    /// Adam step on the generator: victim-loss gradient plus the diversity
    /// term's gradient, backpropagated through G.
    pub fn observe(&mut self, input_grad_mean: &Tensor<f32>) -> Result<(), AttackError> {
        let Some((z, labels)) = self.last.take() else { return Ok(()) };
        self.next_class = (self.next_class + labels.len()) % self.gen.classes;
        let input = self.gen.encode(&z, &labels);
        let acts = self.gen.net.forward(&input)?;
        let output = acts.last().unwrap();
        let mut upstream = per_sample(input_grad_mean);
        self.add_diversity_grad(&z, &labels, output, &mut upstream);
        let (grads, _) = self.gen.net.backward(&acts, &upstream)?;
        if !grads.all_finite() {
            return Err(AttackError::GeneratorDiverged("generator gradients".into()));
        }
        self.optimizer.step(&mut self.gen.net.params, &grads);
        if !self.gen.net.params.all_finite() {
            return Err(AttackError::GeneratorDiverged("generator parameters".into()));
        }
        self.observed += labels.len() as u64;
        Ok(())
    }

    /// d/dx of -w * mean over same-class pairs of
    /// min(cap, |x1-x2|_1 / |z1-z2|_1).
    fn add_diversity_grad(
        &self,
        z: &[f32],
        labels: &[u32],
        output: &Tensor<f32>,
        upstream: &mut Tensor<f32>,
    ) {
        let batch = labels.len();
        let classes = self.gen.classes;
        if batch <= classes {
            return;
        }
        let n = output.len() / batch;
        let pairs: Vec<(usize, usize)> = (0..batch - classes)
            .map(|i| (i, i + classes))
            .filter(|(i, j)| labels[*i] == labels[*j])
            .collect();
        if pairs.is_empty() {
            return;
        }
        let scale = self.cfg.div_weight / pairs.len() as f64;
        let ld = self.gen.latent_dim;
        let od = output.data();
        let up = upstream.data_mut();
        for (i, j) in pairs {
            let z_dist: f64 = (0..ld)
                .map(|k| f64::from((z[i * ld + k] - z[j * ld + k]).abs()))
                .sum::<f64>()
                .max(1e-6);
            let x_dist: f64 = (0..n)
                .map(|k| f64::from((od[i * n + k] - od[j * n + k]).abs()))
                .sum();
            if x_dist / z_dist >= self.cfg.div_cap {
                continue; // capped: no push once diverse enough
            }
            let g = (scale / z_dist) as f32;
            for k in 0..n {
                let d = od[i * n + k] - od[j * n + k];
                if d > 0.0 {
                    up[i * n + k] -= g;
                    up[j * n + k] += g;
                } else if d < 0.0 {
                    up[i * n + k] += g;
                    up[j * n + k] -= g;
                }
            }
        }
    }

    /// Balanced synthetic dataset from the trained generator.
    pub fn sample_dataset(&mut self, count: usize) -> Result<Dataset, AttackError> {
        let labels: Vec<u32> = (0..count).map(|i| (i % self.gen.classes) as u32).collect();
        let mut images = Vec::with_capacity(count * self.gen.out_dims.iter().product::<usize>());
        for chunk in labels.chunks(self.cfg.batch.max(1)) {
            let z = self.gen.sample_latent(chunk.len(), &mut self.rng);
            let x = self.gen.generate(&z, chunk)?;
            images.extend_from_slice(x.data());
        }
        let mut dims = vec![count];
        dims.extend_from_slice(&self.gen.out_dims);
        Ok(Dataset::new(
            Tensor::new(dims, images).map_err(AttackError::Nn)?,
            labels,
            self.gen.classes,
        )
        .map_err(CoreError::Data)?)
    }
}

pub struct GanPolicy {
    pub state: GanState,
}

impl AttackPolicy for GanPolicy {
    fn propose(&mut self, _epoch: u32, _step: u64) -> Result<(Tensor<f32>, Vec<u32>), CoreError> {
        self.state.propose().map_err(CoreError::from)
    }

    fn observe(&mut self, feedback: QueryFeedback) -> Result<(), CoreError> {
        self.state.observe(&feedback.input_grad).map_err(CoreError::from)
    }

    fn into_any(self: Box<Self>) -> Box<dyn std::any::Any> {
        self
    }
}

pub struct GanOutput {
    pub generator: GeneratorModel,
    pub synthetic: Dataset,
    pub surrogate: SurrogateModel,
    pub queries_used: u64,
    pub log: sfl_core::QueryLog,
}

/// Fine-tuning form: train G against the frozen victim, sample a balanced
/// synthetic set, train the surrogate on it.
pub fn gan_me_finetune(
    victim: &SplitModel,
    input_dims: &[usize],
    classes: usize,
    cfg: GanConfig,
    surrogate_cfg: &SurrogateTrainConfig,
    rng: &Rng,
) -> Result<GanOutput, AttackError> {
    let gen = GeneratorModel::build(classes, cfg.latent_dim, input_dims, rng)?;
    let mut env = WhiteBoxEnv::new(victim, cfg.budget);
    let mut state = GanState::new(gen, cfg.clone(), rng.stream("gan"));
    while env.can_afford(cfg.batch) {
        let (x, y) = state.propose()?;
        let fb = env.query(&x, &y)?;
        state.observe(&fb.input_grad)?;
    }
    let queries_used = env.used();
    gan_offline(state, victim, input_dims, surrogate_cfg, rng)
        .map(|mut out| {
            out.queries_used = queries_used;
            out.log = env.log;
            out
        })
}

/// Offline phase: sample from the trained generator and distill.
pub fn gan_offline(
    mut state: GanState,
    victim: &SplitModel,
    input_dims: &[usize],
    surrogate_cfg: &SurrogateTrainConfig,
    rng: &Rng,
) -> Result<GanOutput, AttackError> {
    let synthetic = state.sample_dataset(state.cfg.synth_count)?;
    let surrogate = SurrogateModel::from_victim(victim, input_dims, surrogate_cfg.variant, rng)?;
    let surrogate = train_surrogate(surrogate, &synthetic, None, surrogate_cfg, rng)?;
    Ok(GanOutput {
        generator: state.gen,
        synthetic,
        surrogate,
        queries_used: 0,
        log: sfl_core::QueryLog::default(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generator_output_matches_victim_input_dims() {
        let gen = GeneratorModel::build(10, 16, &[1, 8, 8], &Rng::from_seed(1)).unwrap();
        let mut rng = Rng::from_seed(2);
        let z = gen.sample_latent(4, &mut rng);
        let x = gen.generate(&z, &[0, 1, 2, 3]).unwrap();
        assert_eq!(x.dims(), &[4, 1, 8, 8]);
        assert!(x.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn distinct_latents_do_not_collapse() {
        let gen = GeneratorModel::build(10, 16, &[1, 8, 8], &Rng::from_seed(3)).unwrap();
        let mut rng = Rng::from_seed(4);
        let z1 = gen.sample_latent(1, &mut rng);
        let z2 = gen.sample_latent(1, &mut rng);
        let a = gen.generate(&z1, &[5]).unwrap();
        let b = gen.generate(&z2, &[5]).unwrap();
        let dist: f32 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum();
        assert!(dist > 0.0);
    }

    #[test]
    fn indivisible_output_size_is_rejected() {
        assert!(GeneratorModel::build(10, 16, &[1, 6, 6], &Rng::from_seed(0)).is_err());
    }
}
