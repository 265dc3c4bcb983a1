//! The train -> attack -> eval pipeline behind every subcommand.

use std::path::Path;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use serde_json::json;

use sfl_attacks::{
    craft_offline, gan_offline, gm_offline, naive_baseline, soft_offline, train_me,
    AttackResult, CraftConfig, CraftPolicy, CraftState, GanConfig, GanPolicy, GanState,
    GeneratorModel, GmConfig, GmPolicy, SoftConfig, SoftPolicy, SurrogateTrainConfig,
};
use sfl_core::{
    centralized_train, run_training, CentralizedSetup, InputGradModel,
    MaliciousSpec, QueryLog, SflMode, SplitModel, TrainSetup,
};
use sfl_data::{partition, sample_subset, synthesize, AugmentConfig, Dataset, PartitionPlan,
               SyntheticSpec};
use sfl_eval::{accuracy, adversarial_transfer, fidelity, model_inversion, AdvConfig,
               InverterSpec, MetricsRecord};
use sfl_nn::{Rng, UnitSpec};

use crate::config::{DatasetKind, ExperimentConfig, Method, Mode, PartitionKind};

pub struct DatasetBundle {
    pub train: Dataset,
    pub val: Dataset,
}

pub fn build_datasets(cfg: &ExperimentConfig, root: &Rng) -> Result<DatasetBundle> {
    match cfg.dataset.kind {
        DatasetKind::Synthetic => {
            let spec = |count: usize, stream: &str| SyntheticSpec {
                classes: cfg.dataset.classes,
                count,
                height: cfg.dataset.height,
                width: cfg.dataset.width,
                angle_offset: 0.0,
                noise: cfg.dataset.noise,
                jitter_deg: cfg.dataset.jitter_deg,
                seed: root.stream(stream).next_u64(),
            };
            Ok(DatasetBundle {
                train: synthesize(&spec(cfg.dataset.train, "data/train")),
                val: synthesize(&spec(cfg.dataset.val, "data/val")),
            })
        }
        DatasetKind::Idx => {
            let images = cfg.dataset.images.as_ref().expect("validated");
            let labels = cfg.dataset.labels.as_ref().expect("validated");
            let train = sfl_data::idx::load_idx_pair(Path::new(images), Path::new(labels))?;
            let val = match (&cfg.dataset.val_images, &cfg.dataset.val_labels) {
                (Some(vi), Some(vl)) => {
                    sfl_data::idx::load_idx_pair(Path::new(vi), Path::new(vl))?
                }
                _ => bail!("dataset.kind = \"idx\" needs val-images and val-labels"),
            };
            Ok(DatasetBundle { train, val })
        }
    }
}

/// The GM attack's natural auxiliary data: same rendering statistics,
/// disjoint class prototypes.
pub fn build_aux(cfg: &ExperimentConfig, count: usize, root: &Rng) -> Dataset {
    synthesize(&SyntheticSpec {
        classes: cfg.dataset.classes,
        count,
        height: cfg.dataset.height,
        width: cfg.dataset.width,
        angle_offset: cfg.attack.aux_angle_offset,
        noise: cfg.dataset.noise,
        jitter_deg: cfg.dataset.jitter_deg,
        seed: root.stream("data/aux").next_u64(),
    })
}

fn augment_of(on: bool) -> Option<AugmentConfig> {
    on.then(AugmentConfig::default)
}

pub fn surrogate_cfg(cfg: &ExperimentConfig) -> SurrogateTrainConfig {
    SurrogateTrainConfig {
        epochs: cfg.surrogate.epochs,
        batch_size: cfg.surrogate.batch_size,
        lr: cfg.surrogate.lr,
        momentum: cfg.surrogate.momentum,
        milestones: cfg.surrogate.milestones.clone(),
        lr_factor: cfg.surrogate.lr_factor,
        augment: augment_of(cfg.surrogate.augment),
        variant: cfg.attack.variant.to_attacks(),
    }
}

/// Distill-only attacks train on generated data; augmentation stays off.
fn surrogate_cfg_no_augment(cfg: &ExperimentConfig) -> SurrogateTrainConfig {
    SurrogateTrainConfig { augment: None, ..surrogate_cfg(cfg) }
}

/// Centralized pre-training of the fine-tuning victim; the L1 defense
/// applies to the units below the cut.
pub fn pretrain_victim(cfg: &ExperimentConfig, root: &Rng) -> Result<SplitModel> {
    let units = cfg.units();
    let cut = units.len() - cfg.model.n_server;
    let setup = CentralizedSetup {
        units: units.clone(),
        epochs: cfg.victim.epochs,
        batch_size: cfg.victim.batch_size,
        lr: cfg.victim.lr,
        momentum: cfg.victim.momentum,
        milestones: cfg.victim.milestones.clone(),
        lr_factor: cfg.victim.lr_factor,
        defense_l1: cfg.victim.defense_l1,
        defense_cut: cut,
        augment: augment_of(cfg.victim.augment),
        pretrained: None,
    };
    let bundle = build_datasets(cfg, root)?;
    let (params, _) = centralized_train(setup, &bundle.train, &root.stream("victim"))?;
    Ok(SplitModel::split(units, params, cfg.model.n_server)?)
}

fn partition_plan(cfg: &ExperimentConfig) -> PartitionPlan {
    match cfg.victim.partition {
        PartitionKind::Iid => PartitionPlan::Iid { clients: cfg.victim.clients },
        PartitionKind::ClassLimited => PartitionPlan::ClassLimited {
            clients: cfg.victim.clients,
            classes_per_client: cfg.victim.classes_per_client,
        },
    }
}

/// The attacker's limited-data subset, optionally class-restricted.
pub fn attacker_subset(cfg: &ExperimentConfig, train: &Dataset, root: &Rng) -> Dataset {
    let pool: Vec<usize> = if cfg.attack.classes_limit > 0 {
        (0..train.len())
            .filter(|&i| (train.labels[i] as usize) < cfg.attack.classes_limit)
            .collect()
    } else {
        (0..train.len()).collect()
    };
    let pool_ds = train.select(&pool);
    let picked = sample_subset(
        &pool_ds,
        cfg.attack.data_fraction,
        cfg.attack.stratified,
        &root.stream("attacker/subset"),
    );
    pool_ds.select(&picked)
}

/// One evaluated attack, ready for metrics and persistence.
pub struct AttackRun {
    pub name: String,
    pub surrogate: Box<dyn InputGradModel>,
    /// Full-chain units + parameters of the surrogate, for checkpointing.
    pub checkpoint: (Vec<UnitSpec>, sfl_nn::ParamSet),
    pub queries_used: u64,
    pub log: QueryLog,
    pub config_echo: serde_json::Value,
    pub wallclock_s: f64,
}

fn surrogate_checkpoint(s: &sfl_attacks::SurrogateModel) -> (Vec<UnitSpec>, sfl_nn::ParamSet) {
    let mut units = s.client_units.clone();
    units.extend_from_slice(&s.server_units);
    let mut entries = s.client.entries().to_vec();
    entries.extend_from_slice(s.server.entries());
    (units, sfl_nn::ParamSet::from_entries(entries))
}

fn full_checkpoint(f: &sfl_attacks::FullModel) -> (Vec<UnitSpec>, sfl_nn::ParamSet) {
    (f.units.clone(), f.params.clone())
}

fn input_dims(cfg: &ExperimentConfig) -> Vec<usize> {
    vec![1, cfg.dataset.height, cfg.dataset.width]
}

fn craft_cfg(cfg: &ExperimentConfig) -> CraftConfig {
    CraftConfig {
        budget: cfg.attack.budget,
        steps: cfg.attack.steps,
        batch: cfg.attack.batch,
        adam_lr: cfg.attack.craft_adam_lr,
    }
}

fn gan_cfg(cfg: &ExperimentConfig) -> GanConfig {
    GanConfig {
        budget: cfg.attack.budget,
        batch: cfg.attack.batch,
        latent_dim: cfg.attack.latent_dim,
        div_weight: cfg.attack.div_weight,
        div_cap: cfg.attack.div_cap,
        adam_lr: cfg.attack.gan_adam_lr,
        synth_count: cfg.attack.synth_count,
    }
}

fn gm_cfg(cfg: &ExperimentConfig) -> GmConfig {
    GmConfig {
        budget: cfg.attack.budget,
        batch: cfg.attack.batch,
        epochs: cfg.attack.gm_epochs,
        lr: cfg.attack.gm_lr,
        momentum: cfg.surrogate.momentum,
        milestones: cfg.surrogate.milestones.clone(),
        lr_factor: cfg.surrogate.lr_factor,
        late_k: (cfg.attack.late_k > 0).then_some(cfg.attack.late_k),
        variant: cfg.attack.variant.to_attacks(),
    }
}

fn soft_cfg(cfg: &ExperimentConfig) -> SoftConfig {
    SoftConfig {
        alpha: cfg.attack.alpha,
        soft_weight: cfg.attack.soft_weight,
        batch: cfg.attack.batch,
    }
}

fn attack_echo(cfg: &ExperimentConfig, method: Method) -> serde_json::Value {
    json!({
        "method": method.as_str(),
        "budget": cfg.attack.budget,
        "batch": cfg.attack.batch,
        "variant": format!("{:?}", cfg.attack.variant),
        "data_fraction": cfg.attack.data_fraction,
        "steps": cfg.attack.steps,
        "alpha": cfg.attack.alpha,
        "launch_epoch": cfg.launch_epoch(),
        "late_k": cfg.attack.late_k,
        "surrogate": {
            "epochs": cfg.surrogate.epochs,
            "lr": cfg.surrogate.lr,
            "milestones": cfg.surrogate.milestones,
        },
    })
}

/// Fine-tuning: the attacker queries the frozen victim directly.
pub fn run_attack_finetune(
    cfg: &ExperimentConfig,
    method: Method,
    victim: &SplitModel,
    train: &Dataset,
    root: &Rng,
) -> Result<AttackRun> {
    let started = Instant::now();
    let dims = input_dims(cfg);
    let classes = cfg.dataset.classes;
    let rng = root.stream(&format!("attack/{}", method.as_str()));
    let (surrogate, checkpoint, queries_used, log): (
        Box<dyn InputGradModel>,
        (Vec<UnitSpec>, sfl_nn::ParamSet),
        u64,
        QueryLog,
    ) = match method {
        Method::Craft => {
            let out = sfl_attacks::craft_me_finetune(
                victim,
                &dims,
                classes,
                craft_cfg(cfg),
                &surrogate_cfg_no_augment(cfg),
                &rng,
            )?;
            let ckpt = surrogate_checkpoint(&out.surrogate);
            (Box::new(out.surrogate), ckpt, out.queries_used, out.log)
        }
        Method::Gan => {
            let out = sfl_attacks::gan_me_finetune(
                victim,
                &dims,
                classes,
                gan_cfg(cfg),
                &surrogate_cfg_no_augment(cfg),
                &rng,
            )?;
            let ckpt = surrogate_checkpoint(&out.surrogate);
            (Box::new(out.surrogate), ckpt, out.queries_used, out.log)
        }
        Method::Gm => {
            let aux_count =
                ((cfg.attack.budget / classes as u64) as usize).clamp(1, cfg.dataset.train);
            let aux = build_aux(cfg, aux_count, root);
            let out = sfl_attacks::gm_me_finetune(victim, &aux, &dims, gm_cfg(cfg), &rng)?;
            let ckpt = surrogate_checkpoint(&out.surrogate);
            (Box::new(out.surrogate), ckpt, out.queries_used, out.log)
        }
        Method::Train => {
            let subset = attacker_subset(cfg, train, root);
            let s = train_me(victim, &subset, &surrogate_cfg(cfg), &rng)?;
            let ckpt = surrogate_checkpoint(&s);
            (Box::new(s), ckpt, 0, QueryLog::default())
        }
        Method::Softtrain => {
            let subset = attacker_subset(cfg, train, root);
            let out =
                sfl_attacks::softtrain_me_finetune(victim, &subset, soft_cfg(cfg),
                                                   &surrogate_cfg(cfg), &rng)?;
            let ckpt = surrogate_checkpoint(&out.surrogate);
            (Box::new(out.surrogate), ckpt, out.queries_used, out.log)
        }
        Method::Naive => {
            let subset = attacker_subset(cfg, train, root);
            let full = naive_baseline(victim.units(), &subset, &surrogate_cfg(cfg), &rng)?;
            let ckpt = full_checkpoint(&full);
            (Box::new(full), ckpt, 0, QueryLog::default())
        }
    };
    Ok(AttackRun {
        name: method.as_str().to_string(),
        surrogate,
        checkpoint,
        queries_used,
        log,
        config_echo: attack_echo(cfg, method),
        wallclock_s: started.elapsed().as_secs_f64(),
    })
}

/// From-scratch: the model trains across benign clients while the attacker
/// participates; the attack's offline phase runs afterwards against the
/// final white-box client part.
pub fn run_from_scratch(
    cfg: &ExperimentConfig,
    method: Method,
    train: &Dataset,
    root: &Rng,
    workers: usize,
) -> Result<(SplitModel, AttackRun)> {
    let started = Instant::now();
    let units = cfg.units();
    let dims = input_dims(cfg);
    let classes = cfg.dataset.classes;
    let launch = cfg.launch_epoch();
    let shards_idx = partition(train, partition_plan(cfg), root)?;
    let shards: Vec<Dataset> = shards_idx.iter().map(|s| train.select(s)).collect();
    let attacker_shard = shards[0].clone();
    let rng = root.stream(&format!("attack/{}", method.as_str()));

    let setup = TrainSetup {
        units: units.clone(),
        n_server: cfg.model.n_server,
        mode: SflMode::FromScratch,
        epochs: cfg.victim.epochs,
        batch_size: cfg.victim.batch_size,
        lr: cfg.victim.lr,
        momentum: cfg.victim.momentum,
        milestones: cfg.victim.milestones.clone(),
        lr_factor: cfg.victim.lr_factor,
        defense_l1: cfg.victim.defense_l1,
        augment: augment_of(cfg.victim.augment),
        workers,
        probe: None,
        pretrained: None,
        record_transcript: false,
    };

    let malicious: Option<MaliciousSpec> = match method {
        Method::Craft => Some(MaliciousSpec {
            policy: Box::new(CraftPolicy {
                state: CraftState::new(craft_cfg(cfg), classes, dims.clone(),
                                       rng.stream("craft"))
                    .map_err(sfl_core::CoreError::from)?,
            }),
            launch_epoch: launch,
            budget: cfg.attack.budget,
        }),
        Method::Gan => {
            let gen = GeneratorModel::build(classes, cfg.attack.latent_dim, &dims, &rng)
                .map_err(sfl_core::CoreError::from)?;
            Some(MaliciousSpec {
                policy: Box::new(GanPolicy {
                    state: GanState::new(gen, gan_cfg(cfg), rng.stream("gan")),
                }),
                launch_epoch: launch,
                budget: cfg.attack.budget,
            })
        }
        Method::Gm => {
            let aux_count =
                ((cfg.attack.budget / classes as u64) as usize).clamp(1, cfg.dataset.train);
            let aux = build_aux(cfg, aux_count, root);
            Some(MaliciousSpec {
                policy: Box::new(GmPolicy::new(aux, cfg.attack.batch)
                    .map_err(sfl_core::CoreError::from)?),
                launch_epoch: launch,
                budget: cfg.attack.budget,
            })
        }
        Method::Softtrain => Some(MaliciousSpec {
            policy: Box::new(SoftPolicy::new(attacker_shard.clone(), soft_cfg(cfg), launch)
                .map_err(sfl_core::CoreError::from)?),
            launch_epoch: launch,
            budget: cfg.attack.budget,
        }),
        // Train-ME and the naive baseline participate honestly: the
        // attacker's shard is its limited training data.
        Method::Train | Method::Naive => None,
    };

    let outcome = run_training(setup, shards, malicious, &root.stream("victim"))?;
    let victim = outcome.model;
    let queries_used = outcome.queries_used;
    let log = outcome.query_log;

    let (surrogate, checkpoint, queries_used): (
        Box<dyn InputGradModel>,
        (Vec<UnitSpec>, sfl_nn::ParamSet),
        u64,
    ) = match method {
        Method::Craft => {
            let policy = outcome
                .policy
                .ok_or_else(|| anyhow!("craft policy missing"))?
                .into_any()
                .downcast::<CraftPolicy>()
                .map_err(|_| anyhow!("craft policy type"))?;
            let (_, s) = craft_offline(policy.state, &victim, &dims,
                                       &surrogate_cfg_no_augment(cfg), &rng)?;
            let ckpt = surrogate_checkpoint(&s);
            (Box::new(s), ckpt, queries_used)
        }
        Method::Gan => {
            let policy = outcome
                .policy
                .ok_or_else(|| anyhow!("gan policy missing"))?
                .into_any()
                .downcast::<GanPolicy>()
                .map_err(|_| anyhow!("gan policy type"))?;
            let out = gan_offline(policy.state, &victim, &dims,
                                  &surrogate_cfg_no_augment(cfg), &rng)?;
            let ckpt = surrogate_checkpoint(&out.surrogate);
            (Box::new(out.surrogate), ckpt, queries_used)
        }
        Method::Gm => {
            let s = gm_offline(&log, &victim, &dims, &gm_cfg(cfg), &rng)?;
            let ckpt = surrogate_checkpoint(&s);
            (Box::new(s), ckpt, queries_used)
        }
        Method::Softtrain => {
            let policy = outcome
                .policy
                .ok_or_else(|| anyhow!("softtrain policy missing"))?
                .into_any()
                .downcast::<SoftPolicy>()
                .map_err(|_| anyhow!("softtrain policy type"))?;
            let (s, _) = soft_offline(&policy, &victim, &surrogate_cfg(cfg), &rng)?;
            let ckpt = surrogate_checkpoint(&s);
            (Box::new(s), ckpt, queries_used)
        }
        Method::Train => {
            let s = train_me(&victim, &attacker_shard, &surrogate_cfg(cfg), &rng)?;
            let ckpt = surrogate_checkpoint(&s);
            (Box::new(s), ckpt, 0)
        }
        Method::Naive => {
            let full = naive_baseline(&units, &attacker_shard, &surrogate_cfg(cfg), &rng)?;
            let ckpt = full_checkpoint(&full);
            (Box::new(full), ckpt, 0)
        }
    };

    Ok((
        victim,
        AttackRun {
            name: method.as_str().to_string(),
            surrogate,
            checkpoint,
            queries_used,
            log,
            config_echo: attack_echo(cfg, method),
            wallclock_s: started.elapsed().as_secs_f64(),
        },
    ))
}

pub struct EvalExtras {
    pub mi_mse: Option<f64>,
    pub asr_fgsm: Option<f64>,
    pub asr_pgd: Option<f64>,
}

/// Optional downstream metrics for one attack run.
pub fn eval_extras(
    cfg: &ExperimentConfig,
    victim: &SplitModel,
    surrogate: &dyn InputGradModel,
    bundle: &DatasetBundle,
    root: &Rng,
) -> Result<EvalExtras> {
    let mut extras = EvalExtras { mi_mse: None, asr_fgsm: None, asr_pgd: None };
    if cfg.eval.adv {
        let adv_cfg = AdvConfig {
            fgsm_eps: cfg.eval.fgsm_eps,
            pgd_eps: cfg.eval.pgd_eps,
            pgd_iters: cfg.eval.pgd_iters,
            pgd_step: cfg.eval.pgd_step,
            max_samples: cfg.eval.adv_samples,
        };
        let (fgsm, pgd) =
            adversarial_transfer(surrogate, victim, &bundle.val, &adv_cfg,
                                 &root.stream("eval/adv"))?;
        extras.asr_fgsm = Some(fgsm);
        extras.asr_pgd = Some(pgd);
    }
    if cfg.eval.mi {
        extras.mi_mse = Some(victim_inversion(cfg, victim, bundle, root)?);
    }
    Ok(extras)
}

/// Model-inversion MSE against the victim's client part: the curious
/// server trains a decoder on the validation set and reconstructs probe
/// activations from training (client) data.
pub fn victim_inversion(
    cfg: &ExperimentConfig,
    victim: &SplitModel,
    bundle: &DatasetBundle,
    root: &Rng,
) -> Result<f64> {
    let spec = InverterSpec {
        epochs: cfg.eval.mi_epochs,
        adam_lr: cfg.eval.mi_lr,
        ..Default::default()
    };
    let probes_count = cfg.eval.mi_probes.min(bundle.train.len());
    let probe_idx: Vec<usize> = (0..probes_count).collect();
    let probes = bundle.train.select(&probe_idx);
    Ok(model_inversion(
        victim.client_units(),
        &victim.client,
        &bundle.val,
        &probes,
        &spec,
        &root.stream("eval/mi"),
    )?)
}

/// Full pipeline for a list of attacks at the configured N; returns
/// metrics rows (victim row first) and writes artifacts to `out_dir`.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    methods: &[Method],
    out_dir: &Path,
    workers: usize,
) -> Result<Vec<MetricsRecord>> {
    cfg.validate().map_err(|e| anyhow!(e))?;
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))?;
    let root = Rng::from_seed(cfg.experiment.seed);
    let bundle = build_datasets(cfg, &root)?;
    let hash = cfg.hash();
    let mut rows = Vec::new();

    let mut victim_for_eval: Option<SplitModel> = None;
    let mut runs: Vec<(SplitModel, AttackRun)> = Vec::new();
    match cfg.experiment.mode {
        Mode::FineTune => {
            let victim = pretrain_victim(cfg, &root)?;
            for &m in methods {
                let run = run_attack_finetune(cfg, m, &victim, &bundle.train, &root)?;
                runs.push((victim.clone(), run));
            }
            victim_for_eval = Some(victim);
        }
        Mode::FromScratch => {
            for &m in methods {
                let (victim, run) = run_from_scratch(cfg, m, &bundle.train, &root, workers)?;
                if victim_for_eval.is_none() {
                    victim_for_eval = Some(victim.clone());
                }
                runs.push((victim, run));
            }
        }
    }

    let reference_victim = victim_for_eval.expect("at least the victim exists");
    let victim_mi = if cfg.eval.mi {
        Some(victim_inversion(cfg, &reference_victim, &bundle, &root)?)
    } else {
        None
    };
    rows.push(MetricsRecord {
        config_hash: hash.clone(),
        seed: cfg.experiment.seed,
        mode: cfg.experiment.mode.as_str().to_string(),
        n_server: cfg.model.n_server,
        attack: "victim".into(),
        queries_used: 0,
        accuracy: accuracy(&reference_victim, &bundle.val)?,
        fidelity: 100.0,
        mi_mse: victim_mi,
        asr_fgsm: None,
        asr_pgd: None,
        wallclock_s: 0.0,
    });
    crate::artifacts::save_victim(out_dir, &reference_victim)?;

    for (victim, run) in &runs {
        let acc = accuracy(run.surrogate.as_ref(), &bundle.val)?;
        let fid = fidelity(run.surrogate.as_ref(), victim, &bundle.val)?;
        let extras = eval_extras(cfg, victim, run.surrogate.as_ref(), &bundle, &root)?;
        rows.push(MetricsRecord {
            config_hash: hash.clone(),
            seed: cfg.experiment.seed,
            mode: cfg.experiment.mode.as_str().to_string(),
            n_server: cfg.model.n_server,
            attack: run.name.clone(),
            queries_used: run.queries_used,
            accuracy: acc,
            fidelity: fid,
            mi_mse: extras.mi_mse,
            asr_fgsm: extras.asr_fgsm,
            asr_pgd: extras.asr_pgd,
            wallclock_s: 0.0,
        });
        let result = AttackResult {
            attack: run.name.clone(),
            config: run.config_echo.clone(),
            queries_used: run.queries_used,
            accuracy: acc,
            fidelity: fid,
            seed: cfg.experiment.seed,
            wallclock_s: run.wallclock_s,
        };
        crate::artifacts::save_attack(out_dir, run, &result)?;
    }
    Ok(rows)
}
