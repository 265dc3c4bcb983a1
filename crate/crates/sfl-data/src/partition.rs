//! Client partitioning: IID and class-limited non-IID shards.

use sfl_nn::Rng;

use crate::dataset::Dataset;
use crate::error::DataError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartitionPlan {
    Iid { clients: usize },
    /// Each client sees at most `classes_per_client` distinct classes.
    ClassLimited { clients: usize, classes_per_client: usize },
}

impl PartitionPlan {
    pub fn clients(&self) -> usize {
        match *self {
            PartitionPlan::Iid { clients } => clients,
            PartitionPlan::ClassLimited { clients, .. } => clients,
        }
    }
}

/// Split the dataset into per-client index lists. Shards are disjoint; IID
/// shards are equal-sized within one sample. Deterministic given the rng.
pub fn partition(
    dataset: &Dataset,
    plan: PartitionPlan,
    rng: &Rng,
) -> Result<Vec<Vec<usize>>, DataError> {
    let m = plan.clients();
    if m == 0 {
        return Err(DataError::Partition("client count must be >= 1".into()));
    }
    if m > dataset.len() {
        return Err(DataError::Partition(format!(
            "{m} clients exceed {} samples",
            dataset.len()
        )));
    }
    match plan {
        PartitionPlan::Iid { .. } => {
            let mut indices: Vec<usize> = (0..dataset.len()).collect();
            rng.stream("partition").shuffle(&mut indices);
            let base = dataset.len() / m;
            let extra = dataset.len() % m;
            let mut shards = Vec::with_capacity(m);
            let mut at = 0;
            for i in 0..m {
                let take = base + usize::from(i < extra);
                shards.push(indices[at..at + take].to_vec());
                at += take;
            }
            Ok(shards)
        }
        PartitionPlan::ClassLimited { classes_per_client, .. } => {
            let k = dataset.n_classes;
            if classes_per_client == 0 || classes_per_client > k {
                return Err(DataError::Partition(format!(
                    "classes_per_client {classes_per_client} outside 1..={k}"
                )));
            }
            // Client i draws from classes {(i*C + j) mod K}.
            let mut owners: Vec<Vec<usize>> = vec![Vec::new(); k];
            for i in 0..m {
                for j in 0..classes_per_client {
                    let c = (i * classes_per_client + j) % k;
                    if !owners[c].contains(&i) {
                        owners[c].push(i);
                    }
                }
            }
            let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); k];
            for (idx, &l) in dataset.labels.iter().enumerate() {
                by_class[l as usize].push(idx);
            }
            let mut part_rng = rng.stream("partition");
            let mut shards: Vec<Vec<usize>> = vec![Vec::new(); m];
            for c in 0..k {
                if owners[c].is_empty() {
                    continue; // class not assigned to any client
                }
                part_rng.shuffle(&mut by_class[c]);
                let n = by_class[c].len();
                let holders = owners[c].len();
                let base = n / holders;
                let extra = n % holders;
                let mut at = 0;
                for (slot, &client) in owners[c].iter().enumerate() {
                    let take = base + usize::from(slot < extra);
                    shards[client].extend_from_slice(&by_class[c][at..at + take]);
                    at += take;
                }
            }
            Ok(shards)
        }
    }
}

/// The attacker's limited-data subset: a fraction of the pool, uniform by
/// default, optionally stratified by class.
pub fn sample_subset(
    dataset: &Dataset,
    fraction: f64,
    stratified: bool,
    rng: &Rng,
) -> Vec<usize> {
    let want = ((dataset.len() as f64 * fraction).round() as usize)
        .clamp(1, dataset.len());
    let mut stream = rng.stream("subset");
    if !stratified {
        let mut indices: Vec<usize> = (0..dataset.len()).collect();
        stream.shuffle(&mut indices);
        indices.truncate(want);
        return indices;
    }
    let k = dataset.n_classes;
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (idx, &l) in dataset.labels.iter().enumerate() {
        by_class[l as usize].push(idx);
    }
    let mut picked = Vec::with_capacity(want);
    for class in by_class.iter_mut() {
        stream.shuffle(class);
        let take = ((class.len() as f64 * fraction).round() as usize).min(class.len());
        picked.extend_from_slice(&class[..take]);
    }
    picked.sort_unstable();
    picked
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synthesize, SyntheticSpec};

    fn ds(count: usize) -> Dataset {
        synthesize(&SyntheticSpec::desk(10, count, 7))
    }

    #[test]
    fn iid_shards_are_a_disjoint_cover() {
        let d = ds(103);
        let shards = partition(&d, PartitionPlan::Iid { clients: 10 }, &Rng::from_seed(1)).unwrap();
        let mut all: Vec<usize> = shards.iter().flatten().copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..103).collect::<Vec<_>>());
        let sizes: Vec<usize> = shards.iter().map(Vec::len).collect();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }

    #[test]
    fn iid_is_deterministic_per_seed() {
        let d = ds(50);
        let a = partition(&d, PartitionPlan::Iid { clients: 5 }, &Rng::from_seed(3)).unwrap();
        let b = partition(&d, PartitionPlan::Iid { clients: 5 }, &Rng::from_seed(3)).unwrap();
        assert_eq!(a, b);
        let c = partition(&d, PartitionPlan::Iid { clients: 5 }, &Rng::from_seed(4)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn class_limited_respects_class_budget() {
        let d = ds(200);
        let shards = partition(
            &d,
            PartitionPlan::ClassLimited { clients: 10, classes_per_client: 1 },
            &Rng::from_seed(2),
        )
        .unwrap();
        for shard in &shards {
            let mut classes: Vec<u32> = shard.iter().map(|&i| d.labels[i]).collect();
            classes.sort_unstable();
            classes.dedup();
            assert_eq!(classes.len(), 1);
        }
        let mut all: Vec<usize> = shards.iter().flatten().copied().collect();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), shards.iter().map(Vec::len).sum::<usize>());
    }

    #[test]
    fn too_many_clients_is_an_error() {
        let d = ds(5);
        assert!(partition(&d, PartitionPlan::Iid { clients: 6 }, &Rng::from_seed(0)).is_err());
    }

    #[test]
    fn subset_fraction_sizes() {
        let d = ds(200);
        let sub = sample_subset(&d, 0.1, false, &Rng::from_seed(9));
        assert_eq!(sub.len(), 20);
        let strat = sample_subset(&d, 0.1, true, &Rng::from_seed(9));
        assert_eq!(strat.len(), 20);
        let mut per_class = [0usize; 10];
        for &i in &strat {
            per_class[d.labels[i] as usize] += 1;
        }
        assert!(per_class.iter().all(|&c| c == 2));
    }
}
