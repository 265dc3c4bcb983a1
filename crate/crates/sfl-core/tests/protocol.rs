//! Protocol-level properties: single-client equivalence, defense no-op,
//! scheduling invariance, consistency probes, and desk-scale smoke.

use sfl_core::{
    centralized_train, desk_units, gradient_consistency, run_training, AttackPolicy,
    CentralizedSetup, CoreError, MaliciousSpec, QueryFeedback, SflMode, SplitModel, TrainSetup,
};
use sfl_data::{partition, synthesize, uniform_noise_images, PartitionPlan, SyntheticSpec};
use sfl_data::{AugmentConfig, Dataset};
use sfl_nn::{Rng, Tensor};

fn desk_dataset(count: usize, seed: u64) -> Dataset {
    synthesize(&SyntheticSpec::desk(10, count, seed))
}

fn base_setup(n_server: usize, epochs: u32, mode: SflMode) -> TrainSetup {
    TrainSetup {
        units: desk_units(1, 8, 8, 10),
        n_server,
        mode,
        epochs,
        batch_size: 64,
        lr: 0.05,
        momentum: 0.9,
        milestones: vec![],
        lr_factor: 0.2,
        defense_l1: 0.0,
        augment: Some(AugmentConfig::default()),
        workers: 1,
        probe: None,
        pretrained: None,
        record_transcript: false,
    }
}

#[test]
fn single_client_run_is_bit_identical_to_centralized_training() {
    let ds = desk_dataset(512, 21);
    let root = Rng::from_seed(77);
    let shard_idx = partition(&ds, PartitionPlan::Iid { clients: 1 }, &root).unwrap();
    let shard = ds.select(&shard_idx[0]);

    let mut setup = base_setup(3, 3, SflMode::FromScratch);
    setup.milestones = vec![2];
    let outcome = run_training(setup, vec![shard.clone()], None, &root).unwrap();

    let central = CentralizedSetup {
        units: desk_units(1, 8, 8, 10),
        epochs: 3,
        batch_size: 64,
        lr: 0.05,
        momentum: 0.9,
        milestones: vec![2],
        lr_factor: 0.2,
        defense_l1: 0.0,
        defense_cut: 0,
        augment: Some(AugmentConfig::default()),
        pretrained: None,
    };
    let (central_params, central_losses) = centralized_train(central, &shard, &root).unwrap();

    assert_eq!(outcome.model.merged_params(), central_params);
    assert_eq!(outcome.epoch_losses, central_losses);
}

#[test]
fn zero_lambda_defense_is_a_bitwise_no_op() {
    let ds = desk_dataset(256, 4);
    let root = Rng::from_seed(5);
    let shards = partition(&ds, PartitionPlan::Iid { clients: 2 }, &root).unwrap();
    let shards: Vec<Dataset> = shards.iter().map(|s| ds.select(s)).collect();

    let run = |l1: f64| {
        let mut setup = base_setup(2, 2, SflMode::FromScratch);
        setup.defense_l1 = l1;
        run_training(setup, shards.clone(), None, &root).unwrap()
    };
    let a = run(0.0);
    let b = run(0.0);
    assert_eq!(a.model.merged_params(), b.model.merged_params());
    let c = run(1e-3);
    assert_ne!(a.model.merged_params(), c.model.merged_params());
}

#[test]
fn final_params_are_invariant_to_worker_count() {
    let ds = desk_dataset(384, 9);
    let root = Rng::from_seed(11);
    let shards = partition(&ds, PartitionPlan::Iid { clients: 3 }, &root).unwrap();
    let shards: Vec<Dataset> = shards.iter().map(|s| ds.select(s)).collect();

    let run = |workers: usize| {
        let mut setup = base_setup(3, 2, SflMode::FromScratch);
        setup.workers = workers;
        run_training(setup, shards.clone(), None, &root)
            .unwrap()
            .model
            .merged_params()
    };
    assert_eq!(run(1), run(3));
}

#[test]
fn training_loss_decreases_by_epoch_five() {
    let ds = desk_dataset(1024, 33);
    let root = Rng::from_seed(1);
    let shards = partition(&ds, PartitionPlan::Iid { clients: 2 }, &root).unwrap();
    let shards: Vec<Dataset> = shards.iter().map(|s| ds.select(s)).collect();
    let outcome = run_training(base_setup(3, 5, SflMode::FromScratch), shards, None, &root).unwrap();
    assert!(outcome.epoch_losses[4] < outcome.epoch_losses[0],
            "losses: {:?}", outcome.epoch_losses);
}

#[test]
fn desk_model_fits_synthetic_data() {
    // Learnability guard: >= 90% train accuracy within 20 epochs.
    let ds = desk_dataset(2000, 50);
    let root = Rng::from_seed(2);
    let central = CentralizedSetup {
        units: desk_units(1, 8, 8, 10),
        epochs: 20,
        batch_size: 128,
        lr: 0.05,
        momentum: 0.9,
        milestones: vec![],
        lr_factor: 0.2,
        defense_l1: 0.0,
        defense_cut: 0,
        augment: None,
        pretrained: None,
    };
    let (params, _) = centralized_train(central, &ds, &root).unwrap();
    let units = desk_units(1, 8, 8, 10);
    let (x, y) = ds.batch(0, ds.len());
    let logits = sfl_core::model_logits(&units, &params, &x).unwrap();
    let pred = sfl_core::argmax_rows(&logits);
    let correct = pred.iter().zip(&y).filter(|(p, y)| p == y).count();
    let acc = correct as f64 / y.len() as f64;
    assert!(acc >= 0.90, "train accuracy {acc}");
}

fn probe_at_cut(model_units: &[sfl_nn::UnitSpec], n_server: usize, ds: &Dataset) -> (Tensor<f32>, Vec<usize>) {
    let root = Rng::from_seed(123);
    let model = SplitModel::init(model_units.to_vec(), n_server, &root.stream("probe-init")).unwrap();
    let (x, y) = ds.batch(0, 32);
    let a = model.client_forward(&x).unwrap();
    (a, y)
}

#[test]
fn frozen_server_has_zero_consistency_drift() {
    let ds = desk_dataset(256, 8);
    let root = Rng::from_seed(3);
    let units = desk_units(1, 8, 8, 10);
    let probe = probe_at_cut(&units, 3, &ds);
    let shards = vec![ds];
    let mut setup = base_setup(3, 4, SflMode::FineTune { server_frozen: true, server_lr: 0.0 });
    setup.probe = Some(probe);
    let outcome = run_training(setup, shards, None, &root).unwrap();
    assert_eq!(outcome.probe_grads.len(), 4);
    let series = gradient_consistency(&outcome.probe_grads).unwrap();
    assert_eq!(series.len(), 3);
    assert!(series.iter().all(|&v| v == 0.0), "series: {series:?}");
}

#[test]
fn from_scratch_drift_settles_after_the_last_milestone() {
    let ds = desk_dataset(1500, 13);
    let root = Rng::from_seed(14);
    let units = desk_units(1, 8, 8, 10);
    let probe = probe_at_cut(&units, 3, &ds);
    let shards = partition(&ds, PartitionPlan::Iid { clients: 3 }, &root).unwrap();
    let shards: Vec<Dataset> = shards.iter().map(|s| ds.select(s)).collect();
    let mut setup = base_setup(3, 16, SflMode::FromScratch);
    setup.milestones = vec![6, 10, 13];
    setup.probe = Some(probe);
    let outcome = run_training(setup, shards, None, &root).unwrap();
    let series = gradient_consistency(&outcome.probe_grads).unwrap();
    assert_eq!(series.len(), 15);
    // Drift between epochs t-1 and t lands at series[t-1].
    let before: f64 = series[..6].iter().sum::<f64>() / 6.0;
    let after: f64 = series[13..].iter().sum::<f64>() / 2.0;
    assert!(after < before, "before {before}, after {after}, series {series:?}");
}

/// A minimal policy: fresh noise every step, counts what it saw.
struct NoisePolicy {
    rng: Rng,
    classes: usize,
    batch: usize,
    dims: Vec<usize>,
    seen: u64,
}

impl AttackPolicy for NoisePolicy {
    fn propose(&mut self, _epoch: u32, _step: u64) -> Result<(Tensor<f32>, Vec<u32>), CoreError> {
        let x = uniform_noise_images(self.batch, &self.dims, &mut self.rng);
        let y = (0..self.batch).map(|i| (i % self.classes) as u32).collect();
        Ok((x, y))
    }

    fn observe(&mut self, feedback: QueryFeedback) -> Result<(), CoreError> {
        assert_eq!(feedback.cut_grad.dims(), feedback.activation.dims());
        assert_eq!(feedback.input_grad.dims(), feedback.input.dims());
        self.seen += feedback.input.dims()[0] as u64;
        Ok(())
    }

    fn into_any(self: Box<Self>) -> Box<dyn std::any::Any> {
        self
    }
}

#[test]
fn malicious_client_collects_within_window_and_budget() {
    let ds = desk_dataset(512, 30);
    let root = Rng::from_seed(31);
    let shards = partition(&ds, PartitionPlan::Iid { clients: 2 }, &root).unwrap();
    let shards: Vec<Dataset> = shards.iter().map(|s| ds.select(s)).collect();
    let policy = NoisePolicy {
        rng: root.stream("attacker/noise"),
        classes: 10,
        batch: 64,
        dims: vec![1, 8, 8],
        seen: 0,
    };
    let budget = 256;
    let mut setup = base_setup(3, 4, SflMode::FromScratch);
    setup.batch_size = 64;
    let outcome = run_training(
        setup,
        shards,
        Some(MaliciousSpec { policy: Box::new(policy), launch_epoch: 2, budget }),
        &root,
    )
    .unwrap();
    assert!(outcome.queries_used <= budget);
    assert_eq!(outcome.query_log.sample_count(), outcome.queries_used);
    // Window: nothing collected before the launch epoch.
    assert!(outcome.query_log.records.iter().all(|r| r.epoch >= 2));
    assert!(outcome.queries_used > 0);
}
