//! Experiment harness CLI.

mod artifacts;
mod config;
mod csvio;
mod pipeline;
mod report;

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};

use config::{ExperimentConfig, Method, Mode};
use sfl_core::{run_training, SflMode, SplitModel, TrainSetup};
use sfl_data::{partition, PartitionPlan};
use sfl_eval::{accuracy, adversarial_transfer, fidelity, AdvConfig};
use sfl_nn::checkpoint::load_model_file;
use sfl_nn::Rng;

#[derive(Parser)]
#[command(name = "sfl", about = "Split-learning extraction testbed", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the victim only (no attack) and persist its checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the full train -> attack -> eval pipeline for one method.
    Attack {
        #[arg(long)]
        config: PathBuf,
        /// craft | gan | gm | train | softtrain | naive
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-evaluate persisted victim/surrogate checkpoints.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Model-inversion MSE against the victim's client part.
    Mi {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Transfer adversarial attacks from a surrogate checkpoint.
    Adv {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Aggregate results files into median tables and plot data.
    Report {
        /// results.csv files or directories containing them.
        paths: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Expand the [sweep] section and run every combination.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Worker threads for client-parallel phases. Results never depend on it.
fn workers_from_env() -> usize {
    std::env::var("SFL_WORKERS")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(1)
}

fn load_config(path: &Path, seed: Option<u64>, out: Option<&PathBuf>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_file(path).map_err(|e| anyhow!(e))?;
    if let Some(seed) = seed {
        cfg.experiment.seed = seed;
    }
    if let Some(out) = out {
        cfg.experiment.out_dir = Some(out.display().to_string());
    }
    cfg.validate().map_err(|e| anyhow!(e))?;
    Ok(cfg)
}

fn out_dir(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let dir = cfg
        .experiment
        .out_dir
        .clone()
        .ok_or_else(|| anyhow!("no output directory: set experiment.out-dir or pass --out"))?;
    let path = PathBuf::from(dir);
    std::fs::create_dir_all(&path)?;
    Ok(path)
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Train { config, seed, out } => {
            let cfg = load_config(&config, seed, out.as_ref())?;
            cmd_train(&cfg)
        }
        Command::Attack { config, method, seed, out } => {
            let cfg = load_config(&config, seed, out.as_ref())?;
            let method = match method {
                Some(name) => {
                    Method::parse(&name).ok_or_else(|| anyhow!("unknown method \"{name}\""))?
                }
                None => cfg.attack.method,
            };
            cmd_attack(&cfg, method)
        }
        Command::Eval { config, seed, out } => {
            let cfg = load_config(&config, seed, out.as_ref())?;
            cmd_eval(&cfg)
        }
        Command::Mi { config, seed, out } => {
            let cfg = load_config(&config, seed, out.as_ref())?;
            cmd_mi(&cfg)
        }
        Command::Adv { config, seed, out } => {
            let cfg = load_config(&config, seed, out.as_ref())?;
            cmd_adv(&cfg)
        }
        Command::Report { paths, out } => cmd_report(&paths, out.as_deref()),
        Command::Sweep { config, seed, out } => {
            let cfg = load_config(&config, seed, out.as_ref())?;
            cmd_sweep(&cfg)
        }
    }
}

fn cmd_train(cfg: &ExperimentConfig) -> Result<()> {
    let dir = out_dir(cfg)?;
    let root = Rng::from_seed(cfg.experiment.seed);
    match cfg.experiment.mode {
        Mode::FineTune => {
            let victim = pipeline::pretrain_victim(cfg, &root)?;
            artifacts::save_victim(&dir, &victim)?;
            let bundle = pipeline::build_datasets(cfg, &root)?;
            let acc = accuracy(&victim, &bundle.val)?;
            println!("victim ready: accuracy {acc:.2}% -> {}", dir.display());
        }
        Mode::FromScratch => {
            let bundle = pipeline::build_datasets(cfg, &root)?;
            let units = cfg.units();
            let plan = match cfg.victim.partition {
                config::PartitionKind::Iid => {
                    PartitionPlan::Iid { clients: cfg.victim.clients }
                }
                config::PartitionKind::ClassLimited => PartitionPlan::ClassLimited {
                    clients: cfg.victim.clients,
                    classes_per_client: cfg.victim.classes_per_client,
                },
            };
            let shards_idx = partition(&bundle.train, plan, &root)?;
            let shards: Vec<_> = shards_idx.iter().map(|s| bundle.train.select(s)).collect();
            // A fixed probe at the cut to trace the gradient-consistency
            // series across epochs.
            let probe = {
                let model = SplitModel::init(units.clone(), cfg.model.n_server,
                                             &root.stream("probe-init"))?;
                let count = 32.min(bundle.val.len());
                let (x, y) = bundle.val.batch(0, count);
                let a = model.client_forward(&x)?;
                Some((a, y))
            };
            let setup = TrainSetup {
                units,
                n_server: cfg.model.n_server,
                mode: SflMode::FromScratch,
                epochs: cfg.victim.epochs,
                batch_size: cfg.victim.batch_size,
                lr: cfg.victim.lr,
                momentum: cfg.victim.momentum,
                milestones: cfg.victim.milestones.clone(),
                lr_factor: cfg.victim.lr_factor,
                defense_l1: cfg.victim.defense_l1,
                augment: cfg.victim.augment.then(Default::default),
                workers: workers_from_env(),
                probe,
                pretrained: None,
                record_transcript: false,
            };
            let outcome = run_training(setup, shards, None, &root.stream("victim"))?;
            artifacts::save_victim(&dir, &outcome.model)?;
            write_series(&dir.join("train_losses.csv"), "epoch,loss", &outcome.epoch_losses)?;
            let series = sfl_core::gradient_consistency(&outcome.probe_grads)?;
            write_series(&dir.join("consistency.csv"), "epoch,grad_change", &series)?;
            let acc = accuracy(&outcome.model, &bundle.val)?;
            println!("victim ready: accuracy {acc:.2}% -> {}", dir.display());
        }
    }
    Ok(())
}

fn write_series<T: std::fmt::Display>(path: &Path, header: &str, series: &[T]) -> Result<()> {
    let mut out = String::from(header);
    out.push('\n');
    for (i, v) in series.iter().enumerate() {
        out.push_str(&format!("{i},{v}\n"));
    }
    std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

fn cmd_attack(cfg: &ExperimentConfig, method: Method) -> Result<()> {
    let dir = out_dir(cfg)?;
    let rows = pipeline::run_experiment(cfg, &[method], &dir, workers_from_env())?;
    csvio::write_results(&dir.join("results.csv"), &rows)?;
    for row in &rows {
        println!(
            "{:>10} N={} accuracy {:.2}% fidelity {:.2}% queries {}",
            row.attack, row.n_server, row.accuracy, row.fidelity, row.queries_used
        );
    }
    Ok(())
}

fn load_checkpoint_model(path: &Path) -> Result<sfl_attacks::FullModel> {
    let (units, params) =
        load_model_file(path).with_context(|| format!("loading {}", path.display()))?;
    Ok(sfl_attacks::FullModel { units, params })
}

fn cmd_eval(cfg: &ExperimentConfig) -> Result<()> {
    let dir = out_dir(cfg)?;
    let root = Rng::from_seed(cfg.experiment.seed);
    let bundle = pipeline::build_datasets(cfg, &root)?;
    let victim = load_checkpoint_model(&dir.join("victim.sflx"))?;
    let mut entries: Vec<_> = std::fs::read_dir(&dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("surrogate_") && n.ends_with(".sflx"))
        })
        .collect();
    entries.sort();
    if entries.is_empty() {
        bail!("no surrogate checkpoints under {}", dir.display());
    }
    println!("victim accuracy {:.2}%", accuracy(&victim, &bundle.val)?);
    for path in entries {
        let surrogate = load_checkpoint_model(&path)?;
        let name = path.file_stem().unwrap().to_string_lossy().into_owned();
        println!(
            "{name}: accuracy {:.2}% fidelity {:.2}%",
            accuracy(&surrogate, &bundle.val)?,
            fidelity(&surrogate, &victim, &bundle.val)?
        );
    }
    Ok(())
}

fn cmd_mi(cfg: &ExperimentConfig) -> Result<()> {
    let dir = out_dir(cfg)?;
    let root = Rng::from_seed(cfg.experiment.seed);
    let bundle = pipeline::build_datasets(cfg, &root)?;
    let victim_path = dir.join("victim.sflx");
    let victim = if victim_path.exists() {
        let (units, params) = load_model_file(&victim_path)?;
        SplitModel::split(units, params, cfg.model.n_server)?
    } else {
        bail!("no victim checkpoint at {}; run `sfl train` first", victim_path.display());
    };
    let mse = pipeline::victim_inversion(cfg, &victim, &bundle, &root)?;
    std::fs::write(dir.join("mi.csv"), format!("N,mi_mse\n{},{mse:.6}\n", cfg.model.n_server))?;
    println!("model-inversion MSE at N={}: {mse:.6}", cfg.model.n_server);
    Ok(())
}

fn cmd_adv(cfg: &ExperimentConfig) -> Result<()> {
    let dir = out_dir(cfg)?;
    let root = Rng::from_seed(cfg.experiment.seed);
    let bundle = pipeline::build_datasets(cfg, &root)?;
    let victim = load_checkpoint_model(&dir.join("victim.sflx"))?;
    let surrogate_path = dir.join(format!("surrogate_{}.sflx", cfg.attack.method.as_str()));
    let surrogate = load_checkpoint_model(&surrogate_path)?;
    let adv_cfg = AdvConfig {
        fgsm_eps: cfg.eval.fgsm_eps,
        pgd_eps: cfg.eval.pgd_eps,
        pgd_iters: cfg.eval.pgd_iters,
        pgd_step: cfg.eval.pgd_step,
        max_samples: cfg.eval.adv_samples,
    };
    let (fgsm, pgd) =
        adversarial_transfer(&surrogate, &victim, &bundle.val, &adv_cfg, &root.stream("eval/adv"))?;
    std::fs::write(
        dir.join("adv.csv"),
        format!("N,attack,asr_fgsm,asr_pgd\n{},{},{fgsm:.4},{pgd:.4}\n",
                cfg.model.n_server, cfg.attack.method.as_str()),
    )?;
    println!("ASR fgsm {fgsm:.2}% pgd-targeted {pgd:.2}%");
    Ok(())
}

fn cmd_report(paths: &[PathBuf], out: Option<&Path>) -> Result<()> {
    let paths = if paths.is_empty() {
        vec![PathBuf::from(".")]
    } else {
        paths.to_vec()
    };
    let rows = report::load_results(&paths)?;
    let summary = report::summarize(&rows);
    let table = report::render_table(&summary);
    print!("{table}");
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("summary.txt"), &table)?;
        let written = report::write_plot_data(&summary, &dir.join("plotdata"))?;
        println!("plot data: {} series under {}", written.len(), dir.join("plotdata").display());
    }
    Ok(())
}

fn cmd_sweep(cfg: &ExperimentConfig) -> Result<()> {
    let dir = out_dir(cfg)?;
    let sweep = cfg
        .sweep
        .clone()
        .ok_or_else(|| anyhow!("config has no [sweep] section"))?;
    let n_values = if sweep.n_server.is_empty() {
        vec![cfg.model.n_server]
    } else {
        sweep.n_server.clone()
    };
    let methods = if sweep.attacks.is_empty() {
        vec![cfg.attack.method]
    } else {
        sweep.attacks.clone()
    };
    let seeds = if sweep.seeds.is_empty() {
        vec![cfg.experiment.seed]
    } else {
        sweep.seeds.clone()
    };
    let workers = workers_from_env();
    let mut all_rows = Vec::new();
    // Fine-tuning victims with no defense do not depend on N; reuse them.
    let mut victim_cache: HashMap<(u64, u64, usize), sfl_nn::ParamSet> = HashMap::new();
    for &seed in &seeds {
        for &n in &n_values {
            let mut run_cfg = cfg.clone();
            run_cfg.experiment.seed = seed;
            run_cfg.model.n_server = n;
            run_cfg.sweep = None;
            let sub = dir.join(format!("seed{seed}_n{n}"));
            std::fs::create_dir_all(&sub)?;
            match cfg.experiment.mode {
                Mode::FineTune => {
                    let cut_key = if run_cfg.victim.defense_l1 > 0.0 {
                        run_cfg.units().len() - n
                    } else {
                        0
                    };
                    let key = (seed, run_cfg.victim.defense_l1.to_bits(), cut_key);
                    let root = Rng::from_seed(seed);
                    let params = match victim_cache.get(&key) {
                        Some(p) => p.clone(),
                        None => {
                            let model = pipeline::pretrain_victim(&run_cfg, &root)?;
                            let p = model.merged_params();
                            victim_cache.insert(key, p.clone());
                            p
                        }
                    };
                    let victim = SplitModel::split(run_cfg.units(), params, n)?;
                    let bundle = pipeline::build_datasets(&run_cfg, &root)?;
                    let hash = run_cfg.hash();
                    artifacts::save_victim(&sub, &victim)?;
                    let victim_mi = if run_cfg.eval.mi {
                        Some(pipeline::victim_inversion(&run_cfg, &victim, &bundle, &root)?)
                    } else {
                        None
                    };
                    all_rows.push(sfl_eval::MetricsRecord {
                        config_hash: hash.clone(),
                        seed,
                        mode: run_cfg.experiment.mode.as_str().into(),
                        n_server: n,
                        attack: "victim".into(),
                        queries_used: 0,
                        accuracy: accuracy(&victim, &bundle.val)?,
                        fidelity: 100.0,
                        mi_mse: victim_mi,
                        asr_fgsm: None,
                        asr_pgd: None,
                        wallclock_s: 0.0,
                    });
                    for &m in &methods {
                        let run =
                            pipeline::run_attack_finetune(&run_cfg, m, &victim, &bundle.train, &root)?;
                        let acc = accuracy(run.surrogate.as_ref(), &bundle.val)?;
                        let fid = fidelity(run.surrogate.as_ref(), &victim, &bundle.val)?;
                        let extras =
                            pipeline::eval_extras(&run_cfg, &victim, run.surrogate.as_ref(),
                                                  &bundle, &root)?;
                        let result = sfl_attacks::AttackResult {
                            attack: run.name.clone(),
                            config: run.config_echo.clone(),
                            queries_used: run.queries_used,
                            accuracy: acc,
                            fidelity: fid,
                            seed,
                            wallclock_s: run.wallclock_s,
                        };
                        artifacts::save_attack(&sub, &run, &result)?;
                        all_rows.push(sfl_eval::MetricsRecord {
                            config_hash: hash.clone(),
                            seed,
                            mode: run_cfg.experiment.mode.as_str().into(),
                            n_server: n,
                            attack: run.name.clone(),
                            queries_used: run.queries_used,
                            accuracy: acc,
                            fidelity: fid,
                            mi_mse: extras.mi_mse,
                            asr_fgsm: extras.asr_fgsm,
                            asr_pgd: extras.asr_pgd,
                            wallclock_s: 0.0,
                        });
                    }
                }
                Mode::FromScratch => {
                    let rows = pipeline::run_experiment(&run_cfg, &methods, &sub, workers)?;
                    csvio::write_results(&sub.join("results.csv"), &rows)?;
                    all_rows.extend(rows);
                }
            }
            println!("sweep: seed {seed} N {n} done");
        }
    }
    csvio::write_results(&dir.join("results.csv"), &all_rows)?;
    let summary = report::summarize(&all_rows);
    print!("{}", report::render_table(&summary));
    report::write_plot_data(&summary, &dir.join("plotdata"))?;
    Ok(())
}
