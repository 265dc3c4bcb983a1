//! SoftTrain-ME: collect the cut gradient under every class label for each
//! training sample, turn the per-label gradient geometry into a soft label,
//! and train the surrogate on hard and soft targets together.

use std::collections::HashMap;

use sfl_core::{AttackPolicy, CoreError, QueryFeedback, SplitModel};
use sfl_data::Dataset;
use sfl_nn::{Rng, Tensor};

use crate::error::AttackError;
use crate::oracle::WhiteBoxEnv;
use crate::surrogate::{
    train_surrogate, SoftTargets, SurrogateModel, SurrogateTrainConfig,
};

#[derive(Debug, Clone)]
pub struct SoftConfig {
    /// Mass kept on the true class; must exceed 0.5.
    pub alpha: f64,
    /// Weight of the soft-label loss term next to the hard-label term.
    pub soft_weight: f64,
    pub batch: usize,
}

impl Default for SoftConfig {
    fn default() -> Self {
        SoftConfig { alpha: 0.9, soft_weight: 1.0, batch: 128 }
    }
}

/// The soft label of one sample from its per-label flattened gradients
/// e^1..e^{N_C} and true class c:
///   raw tail q^k = (1-alpha) * cos(e^k, e^c) / sum_{m != c} (cos(e^m, e^c) + 1)
/// clipped at zero, q^c = alpha, then the vector is renormalized to sum 1.
/// A zero-norm gradient makes its cosine 0.
pub fn compute_soft_labels(grads: &[Vec<f64>], true_class: usize, alpha: f64) -> Vec<f64> {
    let classes = grads.len();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let anchor = &grads[true_class];
    let anchor_norm = norm(anchor);
    let cos = |v: &[f64]| -> f64 {
        let n = norm(v);
        if n == 0.0 || anchor_norm == 0.0 {
            return 0.0;
        }
        let dot: f64 = v.iter().zip(anchor).map(|(a, b)| a * b).sum();
        dot / (n * anchor_norm)
    };
    let cosines: Vec<f64> = grads.iter().map(|g| cos(g)).collect();
    let denom: f64 = (0..classes)
        .filter(|&m| m != true_class)
        .map(|m| cosines[m] + 1.0)
        .sum();
    let mut q = vec![0.0f64; classes];
    for k in 0..classes {
        if k == true_class {
            q[k] = alpha;
        } else if denom > 0.0 {
            q[k] = ((1.0 - alpha) * cosines[k] / denom).max(0.0);
        }
    }
    let total: f64 = q.iter().sum();
    for v in &mut q {
        *v /= total;
    }
    q
}

/// Accumulates per-(sample, label) flattened gradients until every class
/// has answered, then yields soft labels.
pub struct SoftCollector {
    classes: usize,
    /// sample index -> per-class flattened gradient
    grads: HashMap<usize, Vec<Option<Vec<f64>>>>,
}

impl SoftCollector {
    pub fn new(classes: usize) -> Self {
        SoftCollector { classes, grads: HashMap::new() }
    }

    pub fn record(&mut self, sample: usize, label: usize, grad_row: &[f32], batch: usize) {
        let slot = self
            .grads
            .entry(sample)
            .or_insert_with(|| vec![None; self.classes]);
        // Store per-sample convention: scale the mean-loss row back by B.
        slot[label] = Some(grad_row.iter().map(|&v| f64::from(v) * batch as f64).collect());
    }

    /// Soft labels for every sample whose label sweep completed.
    pub fn finish(&self, labels: &[u32], alpha: f64) -> Vec<(usize, Vec<f32>)> {
        let mut entries: Vec<(usize, Vec<f32>)> = self
            .grads
            .iter()
            .filter_map(|(&sample, slots)| {
                let complete: Option<Vec<Vec<f64>>> = slots.iter().cloned().collect();
                complete.map(|grads| {
                    let q = compute_soft_labels(&grads, labels[sample] as usize, alpha);
                    (sample, q.into_iter().map(|v| v as f32).collect())
                })
            })
            .collect();
        entries.sort_by_key(|(i, _)| *i);
        entries
    }
}

/// From-scratch policy: behaves like an honest client before the launch
/// epoch, then sweeps the attacker's subset with every label per chunk.
pub struct SoftPolicy {
    subset: Dataset,
    cfg: SoftConfig,
    launch_epoch: u32,
    benign_cursor: usize,
    chunk_cursor: usize,
    label_cursor: usize,
    last_proposed: Option<(Vec<usize>, usize)>,
    pub collector: SoftCollector,
}

impl SoftPolicy {
    pub fn new(subset: Dataset, cfg: SoftConfig, launch_epoch: u32) -> Result<Self, AttackError> {
        if subset.is_empty() {
            return Err(AttackError::EmptyDataset);
        }
        let classes = subset.n_classes;
        Ok(SoftPolicy {
            subset,
            cfg,
            launch_epoch,
            benign_cursor: 0,
            chunk_cursor: 0,
            label_cursor: 0,
            last_proposed: None,
            collector: SoftCollector::new(classes),
        })
    }

    pub fn subset(&self) -> &Dataset {
        &self.subset
    }

    fn chunk_indices(&self) -> Vec<usize> {
        let len = self.cfg.batch.min(self.subset.len() - self.chunk_cursor);
        (self.chunk_cursor..self.chunk_cursor + len).collect()
    }
}

impl AttackPolicy for SoftPolicy {
    fn propose(&mut self, epoch: u32, _step: u64) -> Result<(Tensor<f32>, Vec<u32>), CoreError> {
        if epoch < self.launch_epoch {
            // Honest participation on the attacker's own data.
            if self.benign_cursor + self.cfg.batch > self.subset.len() {
                self.benign_cursor = 0;
            }
            let len = self.cfg.batch.min(self.subset.len());
            let (x, y) = self.subset.batch(self.benign_cursor, len);
            self.benign_cursor += len;
            self.last_proposed = None;
            return Ok((x, y.iter().map(|&l| l as u32).collect()));
        }
        let indices = self.chunk_indices();
        let picked = self.subset.select(&indices);
        let (x, _) = picked.batch(0, picked.len());
        let label = self.label_cursor;
        self.last_proposed = Some((indices.clone(), label));
        Ok((x, vec![label as u32; indices.len()]))
    }

    fn observe(&mut self, feedback: QueryFeedback) -> Result<(), CoreError> {
        let Some((indices, label)) = self.last_proposed.take() else {
            return Ok(());
        };
        let b = indices.len();
        let n = feedback.cut_grad.len() / b;
        for (row, &sample) in indices.iter().enumerate() {
            self.collector.record(
                sample,
                label,
                &feedback.cut_grad.data()[row * n..(row + 1) * n],
                b,
            );
        }
        self.label_cursor += 1;
        if self.label_cursor >= self.subset.n_classes {
            self.label_cursor = 0;
            self.chunk_cursor += self.cfg.batch;
            if self.chunk_cursor >= self.subset.len() {
                self.chunk_cursor = 0;
            }
        }
        Ok(())
    }

    fn into_any(self: Box<Self>) -> Box<dyn std::any::Any> {
        self
    }
}

pub struct SoftOutput {
    pub surrogate: SurrogateModel,
    pub queries_used: u64,
    pub soft_entries: usize,
    pub log: sfl_core::QueryLog,
}

/// Fine-tuning form: sweep every label for every subset sample, then train
/// with hard labels (augmented) plus soft labels (never augmented).
pub fn softtrain_me_finetune(
    victim: &SplitModel,
    subset: &Dataset,
    cfg: SoftConfig,
    surrogate_cfg: &SurrogateTrainConfig,
    rng: &Rng,
) -> Result<SoftOutput, AttackError> {
    if subset.is_empty() {
        return Err(AttackError::EmptyDataset);
    }
    let classes = subset.n_classes;
    let budget = (subset.len() * classes) as u64;
    let mut env = WhiteBoxEnv::new(victim, budget);
    let mut collector = SoftCollector::new(classes);
    for start in (0..subset.len()).step_by(cfg.batch.max(1)) {
        let len = cfg.batch.min(subset.len() - start);
        let (x, _) = subset.batch(start, len);
        for label in 0..classes {
            let fb = env.query(&x, &vec![label as u32; len])?;
            let n = fb.cut_grad.len() / len;
            for row in 0..len {
                collector.record(
                    start + row,
                    label,
                    &fb.cut_grad.data()[row * n..(row + 1) * n],
                    len,
                );
            }
        }
    }
    let entries = collector.finish(&subset.labels, cfg.alpha);
    let soft = SoftTargets { entries, weight: cfg.soft_weight };
    let surrogate =
        SurrogateModel::from_victim(victim, &subset.sample_dims().to_vec(), surrogate_cfg.variant, rng)?;
    let surrogate = train_surrogate(surrogate, subset, Some(&soft), surrogate_cfg, rng)?;
    Ok(SoftOutput {
        surrogate,
        queries_used: env.used(),
        soft_entries: soft.entries.len(),
        log: env.log,
    })
}

/// Offline phase for from-scratch runs: soft labels from whatever sweeps
/// completed inside the window, hard labels for everything.
pub fn soft_offline(
    policy: &SoftPolicy,
    victim: &SplitModel,
    surrogate_cfg: &SurrogateTrainConfig,
    rng: &Rng,
) -> Result<(SurrogateModel, usize), AttackError> {
    let subset = policy.subset();
    let entries = policy.collector.finish(&subset.labels, policy.cfg.alpha);
    let count = entries.len();
    let soft = SoftTargets { entries, weight: policy.cfg.soft_weight };
    let surrogate =
        SurrogateModel::from_victim(victim, &subset.sample_dims().to_vec(), surrogate_cfg.variant, rng)?;
    let surrogate = train_surrogate(surrogate, subset, Some(&soft), surrogate_cfg, rng)?;
    Ok((surrogate, count))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orthogonal_tails_collapse_to_onehot() {
        // e^k orthogonal to e^c for all k != c: numerators vanish.
        let grads = vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ];
        let q = compute_soft_labels(&grads, 0, 0.9);
        assert!((q[0] - 1.0).abs() < 1e-12);
        assert_eq!(&q[1..], &[0.0, 0.0]);
    }

    #[test]
    fn hand_computed_case_matches() {
        // N_C = 10; one e^k equals e^c, the rest orthogonal, alpha = 0.9:
        // denom = (1+1) + 8*(0+1) = 10, raw q^k = 0.1 * 1/10 = 0.01,
        // q^c = 0.9, renormalized: q^c = 0.9/0.91, q^k = 0.01/0.91.
        let dim = 4;
        let anchor = vec![0.0, 0.75, -0.5, 0.25];
        let mut grads = vec![vec![0.0; dim]; 10];
        grads[3] = anchor.clone(); // e^c
        grads[7] = anchor; // cos = 1
        for (k, g) in grads.iter_mut().enumerate() {
            if k != 3 && k != 7 {
                g[0] = 1.0 + k as f64; // only coordinate 0: exactly orthogonal
            }
        }
        let q = compute_soft_labels(&grads, 3, 0.9);
        assert!((q[3] - 0.9 / 0.91).abs() < 1e-9, "q_c = {}", q[3]);
        assert!((q[7] - 0.01 / 0.91).abs() < 1e-9, "q_k = {}", q[7]);
        for (k, &v) in q.iter().enumerate() {
            if k != 3 && k != 7 {
                assert_eq!(v, 0.0);
            }
        }
        let sum: f64 = q.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn soft_labels_are_valid_distributions() {
        let mut rng = Rng::from_seed(17);
        for trial in 0..200 {
            let classes = 2 + (trial % 9);
            let dim = 4 + (trial % 13);
            let grads: Vec<Vec<f64>> = (0..classes)
                .map(|_| (0..dim).map(|_| rng.range_f64(-1.0, 1.0)).collect())
                .collect();
            let c = rng.below(classes);
            let alpha = rng.range_f64(0.51, 0.99);
            let q = compute_soft_labels(&grads, c, alpha);
            assert!(q.iter().all(|&v| v >= 0.0));
            let sum: f64 = q.iter().sum();
            assert!((sum - 1.0).abs() < 1e-6, "sum {sum}");
        }
    }

    #[test]
    fn zero_norm_gradient_contributes_zero_cosine() {
        let grads = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![1.0, 1.0]];
        let q = compute_soft_labels(&grads, 1, 0.8);
        assert_eq!(q.len(), 3);
        assert!(q[0] == 0.0);
        assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
