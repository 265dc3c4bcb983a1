//! Orchestration of one split training run, and the centralized trainer
//! that both pre-trains fine-tuning victims and serves as the algebraic
//! oracle for the single-client case.

use sfl_data::{augment_batch, AugmentConfig, Dataset};
use sfl_nn::loss::cross_entropy_hard;
use sfl_nn::net::{backward, forward};
use sfl_nn::optim::{OptimKind, Optimizer, Schedule};
use sfl_nn::{ParamSet, Rng, Tensor, UnitSpec};
use sfl_transport::bus::{bus_run, LocalLink, Recording};
use sfl_transport::Transcript;

use crate::client::{AttackPolicy, BenignClient, ClientOptConfig, MaliciousClient};
use crate::error::CoreError;
use crate::querylog::QueryLog;
use crate::server::{ServerOptConfig, SflMode, SflServer};
use crate::split::SplitModel;
use crate::sync::fedavg;

/// One split training run, fully declarative.
pub struct TrainSetup {
    pub units: Vec<UnitSpec>,
    pub n_server: usize,
    pub mode: SflMode,
    pub epochs: u32,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub milestones: Vec<usize>,
    pub lr_factor: f64,
    /// L1 strength on client-side weights (benign clients).
    pub defense_l1: f64,
    pub augment: Option<AugmentConfig>,
    pub workers: usize,
    /// Fixed (cut activation, labels) probe; gradients snapshotted per epoch.
    pub probe: Option<(Tensor<f32>, Vec<usize>)>,
    /// Full-chain parameters to start from (fine-tuning); fresh init if None.
    pub pretrained: Option<ParamSet>,
    pub record_transcript: bool,
}

/// An attacker joining the run as one extra client.
pub struct MaliciousSpec {
    pub policy: Box<dyn AttackPolicy>,
    pub launch_epoch: u32,
    pub budget: u64,
}

pub struct TrainOutcome {
    pub model: SplitModel,
    /// The attacker's buffered queries (empty without an attacker).
    pub query_log: QueryLog,
    pub queries_used: u64,
    pub attacker_client: Option<ParamSet>,
    pub policy: Option<Box<dyn AttackPolicy>>,
    pub epoch_losses: Vec<f32>,
    pub probe_grads: Vec<Tensor<f32>>,
    pub transcript: Option<Transcript>,
}

enum SflClient {
    Benign(BenignClient),
    Malicious(MaliciousClient),
}

impl sfl_transport::bus::ClientActor for SflClient {
    fn id(&self) -> u32 {
        match self {
            SflClient::Benign(c) => c.id(),
            SflClient::Malicious(c) => c.id(),
        }
    }

    fn upload_model(&self) -> Vec<Tensor<f32>> {
        match self {
            SflClient::Benign(c) => c.upload_model(),
            SflClient::Malicious(c) => c.upload_model(),
        }
    }

    fn download_model(
        &mut self,
        tensors: &[Tensor<f32>],
    ) -> Result<(), sfl_transport::TransportError> {
        match self {
            SflClient::Benign(c) => c.download_model(tensors),
            SflClient::Malicious(c) => c.download_model(tensors),
        }
    }

    fn produce_activation(
        &mut self,
        epoch: u32,
        step: u64,
    ) -> Result<(Tensor<f32>, Vec<u32>), sfl_transport::TransportError> {
        match self {
            SflClient::Benign(c) => c.produce_activation(epoch, step),
            SflClient::Malicious(c) => c.produce_activation(epoch, step),
        }
    }

    fn apply_gradient(
        &mut self,
        epoch: u32,
        step: u64,
        grad: &Tensor<f32>,
    ) -> Result<(), sfl_transport::TransportError> {
        match self {
            SflClient::Benign(c) => c.apply_gradient(epoch, step, grad),
            SflClient::Malicious(c) => c.apply_gradient(epoch, step, grad),
        }
    }
}


/// Steps per epoch: every client runs the same count, set by the smallest
/// benign shard.
pub fn steps_per_epoch(shards: &[Dataset], batch_size: usize) -> u64 {
    shards
        .iter()
        .map(|s| (s.len() / batch_size) as u64)
        .min()
        .unwrap_or(0)
        .max(1)
}

/// Execute the protocol: per epoch one synchronization, then steps of
/// client-parallel forward, server-sequential gradient queries (one W_S
/// update per step), and client-parallel backward.
pub fn run_training(
    setup: TrainSetup,
    shards: Vec<Dataset>,
    malicious: Option<MaliciousSpec>,
    root: &Rng,
) -> Result<TrainOutcome, CoreError> {
    if shards.is_empty() {
        return Err(CoreError::QueryLog("at least one benign shard required".into()));
    }
    let steps = steps_per_epoch(&shards, setup.batch_size);
    let params = match setup.pretrained {
        Some(p) => p,
        None => sfl_nn::unit::init_params(&setup.units, &root.stream("init")),
    };
    let model = SplitModel::split(setup.units.clone(), params, setup.n_server)?;

    let client_opt = ClientOptConfig {
        lr: setup.lr,
        momentum: setup.momentum,
        milestones: setup.milestones.clone(),
        factor: setup.lr_factor,
    };
    let mut clients: Vec<SflClient> = shards
        .into_iter()
        .enumerate()
        .map(|(i, shard)| {
            SflClient::Benign(BenignClient::new(
                i as u32,
                model.client_units().to_vec(),
                model.client.clone(),
                &client_opt,
                shard,
                setup.batch_size,
                setup.augment,
                setup.defense_l1,
                root.stream(&format!("client{i}")),
            ))
        })
        .collect();
    if let Some(spec) = malicious {
        let id = clients.len() as u32;
        clients.push(SflClient::Malicious(MaliciousClient::new(
            id,
            model.client_units().to_vec(),
            model.client.clone(),
            &client_opt,
            spec.policy,
            spec.launch_epoch,
            spec.budget,
        )));
    }

    let mut server = SflServer::new(
        model.server_units().to_vec(),
        model.server.clone(),
        setup.mode,
        ServerOptConfig {
            lr: setup.lr,
            momentum: setup.momentum,
            milestones: setup.milestones.clone(),
            factor: setup.lr_factor,
        },
        setup.probe.clone(),
    );

    let transcript = {
        let mut link = LocalLink { server: &mut server };
        bus_run(
            &mut link,
            &mut clients,
            setup.epochs,
            steps,
            setup.workers,
            0,
            if setup.record_transcript { Recording::Full } else { Recording::Off },
        )?
    };

    // Deployed client part: the average the next sync would produce.
    let client_params: Vec<ParamSet> = clients
        .iter()
        .map(|c| match c {
            SflClient::Benign(b) => b.params().clone(),
            SflClient::Malicious(m) => m.params().clone(),
        })
        .collect();
    let refs: Vec<&ParamSet> = client_params.iter().collect();
    let averaged = fedavg(&refs)?;

    let mut query_log = QueryLog::default();
    let mut queries_used = 0;
    let mut attacker_client = None;
    let mut policy = None;
    for c in clients {
        if let SflClient::Malicious(m) = c {
            let (params, log, pol, used) = m.into_parts();
            queries_used = used;
            query_log = log;
            attacker_client = Some(params);
            policy = Some(pol);
        }
    }

    let mut final_model = model;
    final_model.client = averaged;
    final_model.server = server.params.clone();

    Ok(TrainOutcome {
        model: final_model,
        query_log,
        queries_used,
        attacker_client,
        policy,
        epoch_losses: server.epoch_losses.clone(),
        probe_grads: server.probe_grads.clone(),
        transcript: if setup.record_transcript { Some(transcript) } else { None },
    })
}

/// Centralized training of the unsplit chain. Mirrors client 0's stream
/// naming and the per-step update order of the split run, so a
/// single-client split run reproduces it bit-for-bit.
pub struct CentralizedSetup {
    pub units: Vec<UnitSpec>,
    pub epochs: u32,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub milestones: Vec<usize>,
    pub lr_factor: f64,
    pub defense_l1: f64,
    /// Index of the first "server" unit for the defense boundary; the L1
    /// term applies to units below it. Use units.len() to penalize all.
    pub defense_cut: usize,
    pub augment: Option<AugmentConfig>,
    pub pretrained: Option<ParamSet>,
}

pub fn centralized_train(
    setup: CentralizedSetup,
    dataset: &Dataset,
    root: &Rng,
) -> Result<(ParamSet, Vec<f32>), CoreError> {
    let mut params = match setup.pretrained {
        Some(p) => p,
        None => sfl_nn::unit::init_params(&setup.units, &root.stream("init")),
    };
    let mut optimizer = Optimizer::new(
        OptimKind::sgd(setup.lr, setup.momentum),
        Schedule::new(setup.milestones.clone(), setup.lr_factor),
    );
    let client_rng = root.stream("client0");
    let steps = ((dataset.len() / setup.batch_size) as u64).max(1);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut losses = Vec::with_capacity(setup.epochs as usize);
    for epoch in 0..setup.epochs {
        optimizer.advance_epoch(epoch as usize);
        let mut shuffle_rng = client_rng.stream(&format!("shuffle/e{epoch}"));
        shuffle_rng.shuffle(&mut order);
        let mut pos = 0usize;
        let mut loss_sum = 0.0f64;
        for step in 0..steps {
            let global_step = u64::from(epoch) * steps + step;
            if pos + setup.batch_size > order.len() {
                pos = 0;
            }
            let indices = &order[pos..pos + setup.batch_size.min(order.len())];
            pos += setup.batch_size;
            let picked = dataset.select(indices);
            let (mut x, y) = picked.batch(0, picked.len());
            if let Some(cfg) = &setup.augment {
                let mut aug_rng = client_rng.stream(&format!("aug/e{epoch}/s{global_step}"));
                x = augment_batch(&x, cfg, &mut aug_rng);
            }
            let acts = forward(&setup.units, &params, &x)?;
            let (loss, grad_logits) = cross_entropy_hard(acts.last().unwrap(), &y)?;
            if !loss.is_finite() {
                return Err(CoreError::Diverged { epoch, loss: f64::from(loss) });
            }
            loss_sum += f64::from(loss);
            let (mut grads, _) = backward(&setup.units, &params, &acts, &grad_logits)?;
            if setup.defense_l1 > 0.0 {
                apply_l1_below_cut(&mut grads, &params, setup.defense_l1, setup.defense_cut);
            }
            optimizer.step(&mut params, &grads);
        }
        losses.push((loss_sum / steps as f64) as f32);
    }
    Ok((params, losses))
}

fn apply_l1_below_cut(grads: &mut ParamSet, params: &ParamSet, lambda: f64, cut: usize) {
    let lambda = lambda as f32;
    for (i, (g, p)) in grads
        .entries_mut()
        .iter_mut()
        .zip(params.entries())
        .enumerate()
    {
        if i >= cut {
            break;
        }
        if let (Some(g), Some(p)) = (g.as_mut(), p.as_ref()) {
            for (gv, &wv) in g.weight.data_mut().iter_mut().zip(p.weight.data()) {
                if wv != 0.0 {
                    *gv += lambda * wv.signum();
                }
            }
        }
    }
}

/// The default desk-scale victim: a 6-unit conv net,
/// Conv(s2) -> Conv -> Flatten -> Linear -> ReLU -> Linear.
///
/// Every odd unit from the tail is parameterized, so each deeper split
/// point (N = 1, 3, 5) hands the server strictly more unknown parameters;
/// and the cut width shrinks as the client grows (128 -> 96 -> 32), so a
/// smaller N leaks less about the input.
pub fn desk_units(in_ch: usize, h: usize, w: usize, classes: usize) -> Vec<UnitSpec> {
    let (oh, ow) = ((h + 2 - 3) / 2 + 1, (w + 2 - 3) / 2 + 1);
    let flat = 6 * oh * ow;
    vec![
        UnitSpec::Conv2d { in_ch, out_ch: 8, kernel: 3, stride: 2, pad: 1 },
        UnitSpec::Conv2d { in_ch: 8, out_ch: 6, kernel: 3, stride: 1, pad: 1 },
        UnitSpec::Flatten,
        UnitSpec::Linear { inputs: flat, outputs: 32 },
        UnitSpec::ReLU,
        UnitSpec::Linear { inputs: 32, outputs: classes },
    ]
}
