//! Attack-level properties against desk-scale victims: crafting descends
//! the frozen loss, the generator's outputs improve over the budget, the
//! GM objective has the victim as its global minimum and recovers a
//! linear server, and Train-ME tracks the victim's accuracy.

use sfl_attacks::{
    craft_me_finetune, gm_fit, gm_me_finetune, train_me, CraftConfig, GanConfig, GanState,
    GeneratorModel, GmConfig, GmPairs, SurrogateArchVariant, SurrogateModel,
    SurrogateTrainConfig, WhiteBoxEnv,
};
use sfl_core::{centralized_train, desk_units, CentralizedSetup, Classifier, SplitModel};
use sfl_data::{synthesize, uniform_noise_images, Dataset, SyntheticSpec};
use sfl_nn::loss::cross_entropy_hard;
use sfl_nn::{Rng, Tensor};

fn victim_from(seed: u64, n_server: usize, train: &Dataset, epochs: u32) -> SplitModel {
    let root = Rng::from_seed(seed);
    let setup = CentralizedSetup {
        units: desk_units(1, 8, 8, 10),
        epochs,
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
    let (params, _) = centralized_train(setup, train, &root).unwrap();
    SplitModel::split(desk_units(1, 8, 8, 10), params, n_server).unwrap()
}

fn fidelity(a: &dyn Classifier, b: &dyn Classifier, ds: &Dataset) -> f64 {
    let (x, _) = ds.batch(0, ds.len());
    let pa = a.predict_of(&x).unwrap();
    let pb = b.predict_of(&x).unwrap();
    let agree = pa.iter().zip(&pb).filter(|(p, q)| p == q).count();
    100.0 * agree as f64 / ds.len() as f64
}

fn accuracy(m: &dyn Classifier, ds: &Dataset) -> f64 {
    let (x, y) = ds.batch(0, ds.len());
    let p = m.predict_of(&x).unwrap();
    let hit = p.iter().zip(&y).filter(|(p, y)| p == y).count();
    100.0 * hit as f64 / ds.len() as f64
}

fn victim_ce(victim: &SplitModel, x: &Tensor<f32>, y: &[u32]) -> f64 {
    let labels: Vec<usize> = y.iter().map(|&l| l as usize).collect();
    let logits = victim.logits(x).unwrap();
    f64::from(cross_entropy_hard(&logits, &labels).unwrap().0)
}

#[test]
fn crafting_descends_the_frozen_loss() {
    let train = synthesize(&SyntheticSpec::desk(10, 2000, 70));
    let victim = victim_from(71, 3, &train, 10);
    let mut env = WhiteBoxEnv::new(&victim, 10_000);
    let mut rng = Rng::from_seed(72);
    let x0 = uniform_noise_images(20, &[1, 8, 8], &mut rng);
    let labels: Vec<u32> = (0..20).map(|i| (i % 10) as u32).collect();
    let initial = victim_ce(&victim, &x0, &labels);

    let cfg = CraftConfig { budget: 20 * 50, steps: 50, batch: 20, adam_lr: 0.1 };
    let mut state =
        sfl_attacks::CraftState::new(cfg, 10, vec![1, 8, 8], Rng::from_seed(72)).unwrap();
    // Seed the state with the same starting noise by driving its proposal.
    let (mut x, y) = state.propose();
    assert_eq!(y, labels);
    let start = victim_ce(&victim, &x, &y);
    while !state.done() {
        let fb = env.query(&x, &y).unwrap();
        state.observe(&fb.input_grad);
        if !state.done() {
            let (nx, _) = state.propose();
            x = nx;
        }
    }
    let final_loss = victim_ce(&victim, &x, &labels);
    assert!(final_loss <= start, "loss went {start} -> {final_loss}");
    assert!(final_loss < 0.5 * initial, "weak descent: {initial} -> {final_loss}");
}

#[test]
fn craft_me_end_to_end_counts_queries() {
    let train = synthesize(&SyntheticSpec::desk(10, 1500, 80));
    let victim = victim_from(81, 1, &train, 8);
    let cfg = CraftConfig { budget: 2000, steps: 20, batch: 50, adam_lr: 0.1 };
    let scfg = SurrogateTrainConfig {
        epochs: 10,
        batch_size: 50,
        milestones: vec![],
        augment: None,
        ..Default::default()
    };
    let out = craft_me_finetune(&victim, &[1, 8, 8], 10, cfg, &scfg, &Rng::from_seed(82)).unwrap();
    assert_eq!(out.crafted.len(), 100); // 2000 / 20
    assert_eq!(out.queries_used, 2000);
    assert_eq!(out.log.sample_count(), 2000);
}

#[test]
fn generator_loss_improves_over_the_budget() {
    let train = synthesize(&SyntheticSpec::desk(10, 2000, 90));
    let victim = victim_from(91, 3, &train, 10);
    let cfg = GanConfig { budget: 16_000, batch: 64, ..Default::default() };
    let gen = GeneratorModel::build(10, cfg.latent_dim, &[1, 8, 8], &Rng::from_seed(92)).unwrap();
    let mut state = GanState::new(gen, cfg.clone(), Rng::from_seed(93));
    let mut env = WhiteBoxEnv::new(&victim, cfg.budget);
    let mut ce_series = Vec::new();
    while env.can_afford(cfg.batch) {
        let (x, y) = state.propose().unwrap();
        ce_series.push(victim_ce(&victim, &x, &y));
        let fb = env.query(&x, &y).unwrap();
        state.observe(&fb.input_grad).unwrap();
    }
    let tenth = ce_series.len() / 10;
    let first: f64 = ce_series[..tenth].iter().sum::<f64>() / tenth as f64;
    let last: f64 = ce_series[ce_series.len() - tenth..].iter().sum::<f64>() / tenth as f64;
    assert!(last < first, "mean CE first 10% {first}, last 10% {last}");
}

#[test]
fn gm_recovers_a_linear_server_with_high_fidelity() {
    // Server = the final Linear unit; auxiliary data with shifted
    // prototypes; 5k query budget.
    let train = synthesize(&SyntheticSpec::desk(10, 2000, 100));
    let victim = victim_from(101, 1, &train, 10);
    let aux = synthesize(&SyntheticSpec {
        angle_offset: 0.5,
        ..SyntheticSpec::desk(10, 500, 102)
    });
    let cfg = GmConfig {
        budget: 5000,
        batch: 100,
        epochs: 40,
        lr: 0.05,
        milestones: vec![25, 35],
        ..Default::default()
    };
    let out = gm_me_finetune(&victim, &aux, &[1, 8, 8], cfg, &Rng::from_seed(103)).unwrap();
    assert_eq!(out.queries_used, 5000);
    let val = synthesize(&SyntheticSpec::desk(10, 1000, 104));
    let fid = fidelity(&out.surrogate, &victim, &val);
    assert!(fid >= 99.0, "fidelity {fid}");
}

#[test]
fn gm_objective_is_positive_away_from_the_victim() {
    let train = synthesize(&SyntheticSpec::desk(10, 1000, 110));
    let victim = victim_from(111, 1, &train, 6);
    let aux = synthesize(&SyntheticSpec::desk(10, 200, 112));
    // Power-of-two query batches keep the mean/per-sample gradient
    // rescaling exact, so the loss at the victim is exactly zero.
    let mut env = WhiteBoxEnv::new(&victim, 100_000);
    for start in (0..aux.len()).step_by(32) {
        let len = 32.min(aux.len() - start);
        let (x, _) = aux.batch(start, len);
        for label in 0..10u32 {
            env.query(&x, &vec![label; len]).unwrap();
        }
    }
    let pairs = GmPairs::from_log(&env.log).unwrap();
    let exact = {
        let mut s = SurrogateModel::from_victim(&victim, &[1, 8, 8], SurrogateArchVariant::Same,
                                                &Rng::from_seed(113)).unwrap();
        s.server = victim.server.clone();
        s
    };
    let measure = |s: SurrogateModel, seed: u64| {
        let cfg = GmConfig { epochs: 1, lr: 0.0, batch: 64, ..Default::default() };
        gm_fit(s, &pairs, &cfg, &Rng::from_seed(seed)).unwrap().1
    };
    let zero_loss = measure(exact.clone(), 114);
    assert_eq!(zero_loss, 0.0);
    // Random entry perturbations of at least 1e-2 give strictly positive loss.
    let mut rng = Rng::from_seed(115);
    for _ in 0..5 {
        let mut perturbed = exact.clone();
        let slot = perturbed.server.get_mut(0).unwrap();
        let idx = rng.below(slot.weight.len());
        slot.weight.data_mut()[idx] += 0.01 + rng.uniform_f32() * 0.05;
        let loss = measure(perturbed, 116);
        assert!(loss > 0.0, "perturbation left GM loss at {loss}");
    }
}

#[test]
fn train_me_with_full_data_tracks_victim_accuracy() {
    let val = synthesize(&SyntheticSpec::desk(10, 1000, 125));
    let mut gaps = Vec::new();
    for seed in [120u64, 121, 122] {
        let train = synthesize(&SyntheticSpec::desk(10, 3000, seed));
        let victim = victim_from(seed + 10, 1, &train, 15);
        let scfg = SurrogateTrainConfig {
            epochs: 15,
            batch_size: 128,
            milestones: vec![],
            augment: None,
            ..Default::default()
        };
        let surrogate = train_me(&victim, &train, &scfg, &Rng::from_seed(seed + 20)).unwrap();
        let gap = (accuracy(&victim, &val) - accuracy(&surrogate, &val)).abs();
        gaps.push(gap);
    }
    gaps.sort_by(f64::total_cmp);
    assert!(gaps[1] <= 2.0, "median accuracy gap {} (all: {gaps:?})", gaps[1]);
}
