use std::collections::VecDeque;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{DatasetError, SourceDataset};
use crate::nn::Sample;
use crate::seed;
use crate::topology::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartitionConfig {
    /// Total samples across all local datasets (train + validation).
    pub global_size: usize,
    pub per_node_min: usize,
    pub per_node_max: usize,
    pub validation_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        Self {
            global_size: 700,
            per_node_min: 50,
            per_node_max: 350,
            validation_fraction: 0.2,
            test_fraction: 0.2,
            seed: 0,
        }
    }
}

/// Local data held by one node: a training set and a disjoint validation set.
#[derive(Debug, Clone)]
pub struct LocalDataset {
    pub node: NodeId,
    pub train: Vec<Sample>,
    pub validation: Vec<Sample>,
    /// Source indices of `train`, in the same order.
    pub train_indices: Vec<usize>,
    /// Source indices of `validation`, in the same order.
    pub validation_indices: Vec<usize>,
}

impl LocalDataset {
    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.train_indices.iter().chain(&self.validation_indices).copied()
    }
}

#[derive(Debug, Clone)]
pub struct Partition {
    pub locals: Vec<LocalDataset>,
    pub test: Vec<Sample>,
    pub test_indices: Vec<usize>,
    /// Source indices not used by the test set or any local dataset.
    pub reserve: Vec<usize>,
}

/// Splits `indices` into a local dataset with `round(validation_fraction * n)` validation samples.
///
/// Any dataset of two or more samples keeps at least one sample on each side.
pub fn local_from_indices(
    src: &SourceDataset,
    node: NodeId,
    indices: &[usize],
    validation_fraction: f64,
) -> LocalDataset {
    let n = indices.len();
    let mut s = (validation_fraction * n as f64).round() as usize;
    if n >= 2 {
        s = s.clamp(1, n - 1);
    } else {
        s = 0;
    }
    let (val, train) = indices.split_at(s);
    LocalDataset {
        node,
        train: train.iter().map(|&i| src.samples[i].clone()).collect(),
        validation: val.iter().map(|&i| src.samples[i].clone()).collect(),
        train_indices: train.to_vec(),
        validation_indices: val.to_vec(),
    }
}

/// Per-node dataset sizes: uniform draws in `[min, max]`, rescaled to sum to `total`.
///
/// The rescale factor is found by bisection on `sum(clamp(s * draw, min, max)) = total`,
/// so every size stays within bounds; remainders go to the largest fractional parts.
pub fn allocate_sizes(
    n: usize,
    total: usize,
    min: usize,
    max: usize,
    rng: &mut impl Rng,
) -> Result<Vec<usize>, DatasetError> {
    if n == 0 {
        return if total == 0 { Ok(Vec::new()) } else { Err(DatasetError::Infeasible("no nodes".into())) };
    }
    if min > max || n * min > total || n * max < total {
        return Err(DatasetError::Infeasible(format!(
            "{n} nodes with sizes in [{min}, {max}] cannot hold {total} samples"
        )));
    }
    let draws: Vec<f64> = (0..n).map(|_| rng.gen_range(min..=max) as f64).collect();
    let (lo_b, hi_b) = (min as f64, max as f64);
    let fill = |s: f64| -> f64 { draws.iter().map(|d| (s * d).clamp(lo_b, hi_b)).sum() };
    let (mut lo, mut hi) = (0.0, hi_b / draws.iter().copied().fold(f64::INFINITY, f64::min));
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if fill(mid) < total as f64 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let real: Vec<f64> = draws.iter().map(|d| (hi * d).clamp(lo_b, hi_b)).collect();
    let mut sizes: Vec<usize> = real.iter().map(|r| r.floor() as usize).collect();
    let mut short = total as i64 - sizes.iter().sum::<usize>() as i64;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let fa = real[a] - real[a].floor();
        let fb = real[b] - real[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    while short != 0 {
        let before = short;
        for &i in &order {
            if short > 0 && sizes[i] < max {
                sizes[i] += 1;
                short -= 1;
            } else if short < 0 && sizes[i] > min {
                sizes[i] -= 1;
                short += 1;
            }
            if short == 0 {
                break;
            }
        }
        if short == before {
            return Err(DatasetError::Infeasible("could not round sizes within bounds".into()));
        }
    }
    Ok(sizes)
}

/// Draws the global test set and one local dataset per node, all disjoint and seeded.
pub fn partition(src: &SourceDataset, node_ids: &[NodeId], cfg: &PartitionConfig) -> Result<Partition, DatasetError> {
    if !(0.0..1.0).contains(&cfg.test_fraction) || !(0.0..1.0).contains(&cfg.validation_fraction) {
        return Err(DatasetError::Infeasible("fractions must lie in [0, 1)".into()));
    }
    let mut rng = seed::rng(cfg.seed);
    let mut order: Vec<usize> = (0..src.len()).collect();
    order.shuffle(&mut rng);
    let n_test = (cfg.test_fraction * src.len() as f64).round() as usize;
    let (test_idx, pool) = order.split_at(n_test);

    let total = if node_ids.is_empty() { 0 } else { cfg.global_size };
    if total > pool.len() {
        return Err(DatasetError::Infeasible(format!(
            "{total} local samples requested but only {} remain after the test split",
            pool.len()
        )));
    }
    let sizes = allocate_sizes(node_ids.len(), total, cfg.per_node_min, cfg.per_node_max, &mut rng)?;
    let mut cursor = 0;
    let locals = node_ids
        .iter()
        .zip(&sizes)
        .map(|(&node, &size)| {
            let idx = &pool[cursor..cursor + size];
            cursor += size;
            local_from_indices(src, node, idx, cfg.validation_fraction)
        })
        .collect();
    Ok(Partition {
        locals,
        test: test_idx.iter().map(|&i| src.samples[i].clone()).collect(),
        test_indices: test_idx.to_vec(),
        reserve: pool[cursor..].to_vec(),
    })
}

/// Writes `node_id,sample_index,role` rows (test rows have an empty node id).
pub fn write_manifest(part: &Partition, out: impl Write) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["node_id", "sample_index", "role"])?;
    for local in &part.locals {
        for &i in &local.train_indices {
            w.write_record([local.node.to_string(), i.to_string(), "train".into()])?;
        }
        for &i in &local.validation_indices {
            w.write_record([local.node.to_string(), i.to_string(), "validation".into()])?;
        }
    }
    for &i in &part.test_indices {
        w.write_record([String::new(), i.to_string(), "test".into()])?;
    }
    w.flush()
}

/// Source indices handed to nodes that join mid-run.
///
/// Samples of departed nodes are returned to the back of the queue, so no
/// sample is ever held by two nodes present at the same time.
#[derive(Debug, Clone)]
pub struct ReservePool {
    queue: VecDeque<usize>,
}

impl ReservePool {
    pub fn new(indices: Vec<usize>) -> Self {
        Self { queue: indices.into() }
    }

    pub fn available(&self) -> usize {
        self.queue.len()
    }

    pub fn draw(&mut self, n: usize) -> Result<Vec<usize>, DatasetError> {
        if n > self.queue.len() {
            return Err(DatasetError::PoolExhausted { requested: n, available: self.queue.len() });
        }
        Ok(self.queue.drain(..n).collect())
    }

    pub fn give_back(&mut self, indices: impl IntoIterator<Item = usize>) {
        self.queue.extend(indices);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::load_source;
    use std::collections::HashSet;

    fn src(n: usize) -> SourceDataset {
        load_source(&format!("synthetic:blobs?n={n}&classes=3&dim=2&seed=3")).unwrap()
    }

    fn ids(n: u64) -> Vec<NodeId> {
        (0..n).map(NodeId).collect()
    }

    #[test]
    fn six_nodes_hold_exactly_the_global_dataset() {
        let part = partition(&src(3500), &ids(6), &PartitionConfig { seed: 4, ..Default::default() }).unwrap();
        let total: usize = part.locals.iter().map(LocalDataset::len).sum();
        assert_eq!(total, 700);
        assert!(part.locals.iter().all(|l| (50..=350).contains(&l.len())));
        assert_eq!(part.test.len(), 700);
    }

    #[test]
    fn test_set_is_disjoint_from_local_data() {
        let cfg = PartitionConfig { global_size: 600, seed: 1, ..Default::default() };
        let part = partition(&src(1000), &ids(4), &cfg).unwrap();
        assert_eq!(part.test.len(), 200);
        let test: HashSet<usize> = part.test_indices.iter().copied().collect();
        let mut seen = HashSet::new();
        for l in &part.locals {
            for i in l.indices() {
                assert!(!test.contains(&i));
                assert!(seen.insert(i), "sample {i} assigned twice");
            }
        }
        assert!(part.reserve.iter().all(|i| !seen.contains(i) && !test.contains(i)));
    }

    #[test]
    fn partition_is_seed_deterministic() {
        let cfg = PartitionConfig { seed: 9, ..Default::default() };
        let s = src(3500);
        let a = partition(&s, &ids(6), &cfg).unwrap();
        let b = partition(&s, &ids(6), &cfg).unwrap();
        let flat = |p: &Partition| p.locals.iter().flat_map(|l| l.indices().collect::<Vec<_>>()).collect::<Vec<_>>();
        assert_eq!(flat(&a), flat(&b));
        assert_eq!(a.test_indices, b.test_indices);
    }

    #[test]
    fn bounds_and_total_hold_over_a_seed_sweep() {
        for nodes in [3u64, 6, 12] {
            for seed in 0..100 {
                let mut rng = crate::seed::rng(seed);
                let sizes = allocate_sizes(nodes as usize, 700, 50, 350, &mut rng).unwrap();
                assert_eq!(sizes.iter().sum::<usize>(), 700, "nodes {nodes} seed {seed}");
                assert!(sizes.iter().all(|s| (50..=350).contains(s)));
            }
        }
    }

    #[test]
    fn infeasible_requests_are_rejected() {
        let mut rng = crate::seed::rng(0);
        assert!(allocate_sizes(2, 800, 50, 350, &mut rng).is_err());
        assert!(allocate_sizes(20, 700, 50, 350, &mut rng).is_err());
        let cfg = PartitionConfig { global_size: 700, ..Default::default() };
        assert!(matches!(partition(&src(500), &ids(6), &cfg), Err(DatasetError::Infeasible(_))));
    }

    #[test]
    fn validation_split_and_manifest() {
        let part = partition(&src(3500), &ids(3), &PartitionConfig::default()).unwrap();
        for l in &part.locals {
            let expected = (0.2 * l.len() as f64).round() as usize;
            assert_eq!(l.validation.len(), expected);
        }
        let mut buf = Vec::new();
        write_manifest(&part, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 700 + 700);
        assert!(text.starts_with("node_id,sample_index,role\n"));
    }

    #[test]
    fn reserve_pool_draws_and_recycles() {
        let mut pool = ReservePool::new((0..10).collect());
        assert_eq!(pool.draw(4).unwrap(), vec![0, 1, 2, 3]);
        assert!(matches!(pool.draw(7), Err(DatasetError::PoolExhausted { requested: 7, available: 6 })));
        pool.give_back([0, 1]);
        assert_eq!(pool.available(), 8);
        assert_eq!(pool.draw(8).unwrap().last(), Some(&1));
    }
}
