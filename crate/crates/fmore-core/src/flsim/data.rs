//! Synthetic classification data and the label-shard non-IID partition.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A labeled dataset with row-major features.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub features: Vec<f64>,
    pub labels: Vec<usize>,
    pub n_features: usize,
    pub n_classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }
}

/// Gaussian-mixture classification task: one spherical cluster per class,
/// cluster centers drawn once from N(0, sep^2 I).
pub fn synth_gaussian_mixture(
    n_samples: usize,
    n_classes: usize,
    n_features: usize,
    separation: f64,
    noise: f64,
    seed: u64,
) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = vec![0.0f64; n_classes * n_features];
    for c in centers.iter_mut() {
        *c = separation * gauss(&mut rng);
    }
    let mut features = Vec::with_capacity(n_samples * n_features);
    let mut labels = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let class = i % n_classes;
        for d in 0..n_features {
            features.push(centers[class * n_features + d] + noise * gauss(&mut rng));
        }
        labels.push(class);
    }
    Dataset {
        features,
        labels,
        n_features,
        n_classes,
    }
}

fn gauss<R: Rng>(rng: &mut R) -> f64 {
    // Box-Muller.
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartitionConfig {
    pub n_nodes: usize,
    /// Single-class shards dealt to each node; caps the node's distinct
    /// labels at this count.
    pub shards_per_node: usize,
    /// Relative shard-size weights (lo, hi); drawn uniformly, then scaled
    /// so every sample is assigned exactly once.
    pub shard_weight_range: (f64, f64),
}

impl Default for PartitionConfig {
    fn default() -> Self {
        PartitionConfig {
            n_nodes: 100,
            shards_per_node: 2,
            shard_weight_range: (0.5, 1.5),
        }
    }
}

/// Label-shard partition: each class's sample indices are cut into
/// single-class shards of randomized size, then shards are dealt
/// `shards_per_node` per node. Every index is assigned exactly once, so
/// `sum D_i` equals the partitioned sample count.
pub fn make_non_iid_partition(
    dataset: &Dataset,
    indices: &[usize],
    cfg: &PartitionConfig,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    if cfg.n_nodes == 0 || cfg.shards_per_node == 0 {
        return Err(Error::Config("partition needs n_nodes, shards_per_node >= 1".into()));
    }
    let (w_lo, w_hi) = cfg.shard_weight_range;
    if !(w_lo > 0.0 && w_hi >= w_lo) {
        return Err(Error::Config("shard weight range must satisfy 0 < lo <= hi".into()));
    }
    let total_shards = cfg.n_nodes * cfg.shards_per_node;
    if total_shards > indices.len() {
        return Err(Error::Config(format!(
            "{total_shards} shards over {} samples: not enough data",
            indices.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Group indices by class.
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.n_classes];
    for &i in indices {
        by_class[dataset.labels[i]].push(i);
    }
    for class in by_class.iter_mut() {
        class.shuffle(&mut rng);
    }

    // Shard quota per class, proportional to class size (largest remainder).
    let total = indices.len() as f64;
    let mut quota: Vec<usize> = Vec::with_capacity(dataset.n_classes);
    let mut rema: Vec<(f64, usize)> = Vec::with_capacity(dataset.n_classes);
    let mut assigned = 0usize;
    for (c, class) in by_class.iter().enumerate() {
        let exact = total_shards as f64 * class.len() as f64 / total;
        let base = exact.floor() as usize;
        // A nonempty class must produce at least one shard.
        let base = if class.is_empty() { 0 } else { base.max(1) };
        quota.push(base);
        assigned += base;
        rema.push((exact - exact.floor(), c));
    }
    rema.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let mut i = 0;
    while assigned < total_shards {
        let c = rema[i % rema.len()].1;
        if quota[c] < by_class[c].len() {
            quota[c] += 1;
            assigned += 1;
        }
        i += 1;
        if i > 10 * rema.len() && assigned < total_shards {
            return Err(Error::Config("cannot allocate shard quotas".into()));
        }
    }
    while assigned > total_shards {
        // Over-assignment can only come from the min-1 rule on tiny classes.
        if let Some(c) = (0..quota.len()).find(|&c| quota[c] > 1) {
            quota[c] -= 1;
            assigned -= 1;
        } else {
            return Err(Error::Config("cannot reduce shard quotas".into()));
        }
    }

    // Cut each class into its shards with randomized sizes.
    let mut shards: Vec<Vec<usize>> = Vec::with_capacity(total_shards);
    for (c, class) in by_class.iter().enumerate() {
        let k = quota[c];
        if k == 0 {
            continue;
        }
        let weights: Vec<f64> = (0..k).map(|_| rng.gen_range(w_lo..=w_hi)).collect();
        let wsum: f64 = weights.iter().sum();
        let mut cuts = Vec::with_capacity(k + 1);
        cuts.push(0usize);
        let mut acc = 0.0;
        for w in weights.iter().take(k - 1) {
            acc += w;
            cuts.push(((acc / wsum) * class.len() as f64).round() as usize);
        }
        cuts.push(class.len());
        for j in 0..k {
            shards.push(class[cuts[j]..cuts[j + 1]].to_vec());
        }
    }

    shards.shuffle(&mut rng);
    let mut nodes: Vec<Vec<usize>> = vec![Vec::new(); cfg.n_nodes];
    for (j, shard) in shards.into_iter().enumerate() {
        nodes[j % cfg.n_nodes].extend(shard);
    }
    Ok(nodes)
}

/// Distinct labels held by a node, as a fraction of all classes.
pub fn category_proportion(dataset: &Dataset, indices: &[usize]) -> f64 {
    let mut seen = vec![false; dataset.n_classes];
    for &i in indices {
        seen[dataset.labels[i]] = true;
    }
    seen.iter().filter(|s| **s).count() as f64 / dataset.n_classes as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn toy() -> Dataset {
        synth_gaussian_mixture(2000, 10, 8, 3.0, 1.0, 5)
    }

    #[test]
    fn partition_conserves_samples() {
        let ds = toy();
        let idx: Vec<usize> = (0..ds.len()).collect();
        let cfg = PartitionConfig {
            n_nodes: 20,
            shards_per_node: 2,
            shard_weight_range: (0.5, 1.5),
        };
        let parts = make_non_iid_partition(&ds, &idx, &cfg, 3).unwrap();
        assert_eq!(parts.len(), 20);
        let all: Vec<usize> = parts.iter().flatten().copied().collect();
        assert_eq!(all.len(), ds.len());
        let set: HashSet<usize> = all.into_iter().collect();
        assert_eq!(set.len(), ds.len(), "every sample assigned exactly once");
    }

    #[test]
    fn shards_cap_distinct_labels() {
        let ds = toy();
        let idx: Vec<usize> = (0..ds.len()).collect();
        let cfg = PartitionConfig {
            n_nodes: 50,
            shards_per_node: 2,
            shard_weight_range: (0.5, 1.5),
        };
        let parts = make_non_iid_partition(&ds, &idx, &cfg, 11).unwrap();
        for p in &parts {
            let labels: HashSet<usize> = p.iter().map(|&i| ds.labels[i]).collect();
            assert!(labels.len() <= 2, "node holds {} labels", labels.len());
        }
    }

    #[test]
    fn single_node_holds_everything() {
        let ds = toy();
        let idx: Vec<usize> = (0..ds.len()).collect();
        let cfg = PartitionConfig {
            n_nodes: 1,
            shards_per_node: 10,
            shard_weight_range: (1.0, 1.0),
        };
        let parts = make_non_iid_partition(&ds, &idx, &cfg, 1).unwrap();
        assert_eq!(parts[0].len(), ds.len());
        assert_eq!(category_proportion(&ds, &parts[0]), 1.0);
    }

    #[test]
    fn partition_is_deterministic() {
        let ds = toy();
        let idx: Vec<usize> = (0..ds.len()).collect();
        let cfg = PartitionConfig::default();
        let cfg = PartitionConfig { n_nodes: 10, ..cfg };
        let a = make_non_iid_partition(&ds, &idx, &cfg, 9).unwrap();
        let b = make_non_iid_partition(&ds, &idx, &cfg, 9).unwrap();
        assert_eq!(a, b);
    }
}
