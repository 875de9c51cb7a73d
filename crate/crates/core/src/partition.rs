//! Client partitions for the three federated long-tail regimes:
//! IID dealing (identical locals), per-class Dirichlet splits (diverse
//! locals), and rotated long-tailed budgets over balanced data (long-tailed
//! locals with different heads).

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::dataset::{ClientShard, Dataset};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::shaping::{exponential_profile, rotate_profile, LtProfile};
use crate::stats::{imbalance_factor_of_counts, DistributionStats};

pub const DEFAULT_MIN_SHARD_SIZE: usize = 10;
pub const DIRICHLET_RETRIES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PartitionKind {
    Iid,
    Dirichlet { alpha: f64 },
    RotatedLongTail { local_if: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub kind: PartitionKind,
    pub num_clients: usize,
    pub min_shard_size: usize,
    pub seed: u64,
}

impl PartitionSpec {
    pub fn new(kind: PartitionKind, num_clients: usize, seed: u64) -> Self {
        Self {
            kind,
            num_clients,
            min_shard_size: DEFAULT_MIN_SHARD_SIZE,
            seed,
        }
    }

    pub fn with_min_shard_size(mut self, min: usize) -> Self {
        self.min_shard_size = min;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_clients == 0 {
            return Err(Error::InvalidArgument("num_clients must be positive".into()));
        }
        match self.kind {
            PartitionKind::Iid => Ok(()),
            PartitionKind::Dirichlet { alpha } if alpha > 0.0 && alpha.is_finite() => Ok(()),
            PartitionKind::Dirichlet { alpha } => Err(Error::InvalidArgument(format!(
                "dirichlet alpha must be positive, got {alpha}"
            ))),
            PartitionKind::RotatedLongTail { local_if } if local_if >= 1.0 && local_if.is_finite() => Ok(()),
            PartitionKind::RotatedLongTail { local_if } => Err(Error::InvalidArgument(format!(
                "local imbalance factor must be >= 1, got {local_if}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionStats {
    pub clients: Vec<DistributionStats>,
    pub global: DistributionStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub shards: Vec<ClientShard>,
    pub spec: PartitionSpec,
    pub stats: PartitionStats,
}

impl Partition {
    fn build(dataset: &Dataset, spec: &PartitionSpec, shards: Vec<ClientShard>) -> Self {
        let clients: Vec<DistributionStats> = shards
            .iter()
            .map(|s| DistributionStats::from_counts(s.class_counts(dataset)))
            .collect();
        let mut global = vec![0u64; dataset.num_classes()];
        for c in &clients {
            for (g, n) in global.iter_mut().zip(&c.counts) {
                *g += n;
            }
        }
        Self {
            shards,
            spec: spec.clone(),
            stats: PartitionStats {
                clients,
                global: DistributionStats::from_counts(global),
            },
        }
    }

    pub fn num_clients(&self) -> usize {
        self.shards.len()
    }

    /// Per-client class counts, `N x M`.
    pub fn count_matrix(&self) -> Vec<Vec<u64>> {
        self.stats.clients.iter().map(|s| s.counts.clone()).collect()
    }

    pub fn report(&self) -> PartitionReport {
        partition_report(self)
    }
}

/// Dispatch on the spec's kind.
pub fn partition(dataset: &Dataset, spec: &PartitionSpec) -> Result<Partition> {
    match spec.kind {
        PartitionKind::Iid => partition_iid(dataset, spec),
        PartitionKind::Dirichlet { .. } => partition_dirichlet(dataset, spec),
        PartitionKind::RotatedLongTail { .. } => partition_rotated_longtail(dataset, spec),
    }
}

fn check_capacity(dataset: &Dataset, spec: &PartitionSpec) -> Result<()> {
    spec.validate()?;
    let need = spec.num_clients * spec.min_shard_size;
    if dataset.len() < need.max(1) {
        return Err(Error::InfeasibleSpec(format!(
            "{} samples cannot give {} clients at least {} each",
            dataset.len(),
            spec.num_clients,
            spec.min_shard_size.max(1)
        )));
    }
    Ok(())
}

fn finish(dataset: &Dataset, spec: &PartitionSpec, mut buckets: Vec<Vec<usize>>) -> Partition {
    let shards = buckets
        .iter_mut()
        .enumerate()
        .map(|(k, idx)| {
            idx.sort_unstable();
            ClientShard::new(k, std::mem::take(idx))
        })
        .collect();
    Partition::build(dataset, spec, shards)
}

/// Shuffle each class under the seed and deal class after class
/// round-robin, so every client holds the global class mix up to one sample
/// per class.
pub fn partition_iid(dataset: &Dataset, spec: &PartitionSpec) -> Result<Partition> {
    check_capacity(dataset, spec)?;
    let n = spec.num_clients;
    let mut rng = rng::stream(spec.seed, "partition-iid", 0, 0);
    let mut buckets = vec![Vec::with_capacity(dataset.len() / n + 1); n];
    let mut next = 0;
    for mut members in dataset.indices_by_class() {
        members.shuffle(&mut rng);
        for i in members {
            buckets[next].push(i);
            next = (next + 1) % n;
        }
    }
    Ok(finish(dataset, spec, buckets))
}

/// Split `total` into integer parts proportional to `weights` using the
/// largest-remainder rule; ties go to the lower index.
pub fn largest_remainder(weights: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    if weights.is_empty() || sum <= 0.0 {
        return vec![0; weights.len()];
    }
    let quotas: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut parts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = parts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &k in order.iter().take(total.saturating_sub(assigned)) {
        parts[k] += 1;
    }
    parts
}

/// Symmetric Dirichlet draw, computed in log space so that small
/// concentrations do not underflow every component to zero.
fn dirichlet(alpha: f64, n: usize, rng: &mut Rng) -> Vec<f64> {
    let (shape, boost) = if alpha < 1.0 {
        (alpha + 1.0, true)
    } else {
        (alpha, false)
    };
    let gamma = Gamma::new(shape, 1.0).expect("positive shape");
    let logs: Vec<f64> = (0..n)
        .map(|_| {
            let g: f64 = gamma.sample(rng);
            let mut l = g.ln();
            if boost {
                let u: f64 = 1.0 - rng.random::<f64>();
                l += u.ln() / alpha;
            }
            l
        })
        .collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Per class, draw client shares from a symmetric Dirichlet(alpha) and deal
/// that class's samples accordingly. Redraws (up to [`DIRICHLET_RETRIES`])
/// when a client would fall below `min_shard_size`.
pub fn partition_dirichlet(dataset: &Dataset, spec: &PartitionSpec) -> Result<Partition> {
    check_capacity(dataset, spec)?;
    let alpha = match spec.kind {
        PartitionKind::Dirichlet { alpha } => alpha,
        other => {
            return Err(Error::InvalidArgument(format!(
                "partition_dirichlet called with {other:?}"
            )))
        }
    };
    let n = spec.num_clients;
    let by_class = dataset.indices_by_class();
    for attempt in 0..DIRICHLET_RETRIES {
        let mut rng = rng::stream(spec.seed, "partition-dirichlet", attempt as u64, 0);
        let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); n];
        for members in &by_class {
            let props = dirichlet(alpha, n, &mut rng);
            let parts = largest_remainder(&props, members.len());
            let mut members = members.clone();
            members.shuffle(&mut rng);
            let mut start = 0;
            for (k, take) in parts.into_iter().enumerate() {
                buckets[k].extend_from_slice(&members[start..start + take]);
                start += take;
            }
        }
        if buckets.iter().all(|b| b.len() >= spec.min_shard_size.max(1)) {
            return Ok(finish(dataset, spec, buckets));
        }
    }
    Err(Error::InfeasibleSpec(format!(
        "no dirichlet(alpha={alpha}) draw gave every one of {n} clients at least {} samples in {DIRICHLET_RETRIES} attempts",
        spec.min_shard_size.max(1)
    )))
}

/// Largest `n_max` whose exponential profile fits in `budget` samples.
pub fn fit_profile_to_budget(budget: u64, num_classes: usize, local_if: f64) -> Result<LtProfile> {
    let fits = |n: u64| -> Option<LtProfile> {
        exponential_profile(n, num_classes, local_if)
            .ok()
            .filter(|p| p.total() <= budget)
    };
    let mut lo = local_if.ceil().max(1.0) as u64;
    let mut best = fits(lo).ok_or_else(|| {
        Error::InfeasibleSpec(format!(
            "a per-client budget of {budget} samples cannot hold a {num_classes}-class profile with imbalance factor {local_if}"
        ))
    })?;
    let mut hi = budget.max(lo);
    while lo < hi {
        let mid = lo + (hi - lo).div_ceil(2);
        match fits(mid) {
            Some(p) => {
                best = p;
                lo = mid;
            }
            None => hi = mid - 1,
        }
    }
    Ok(best)
}

/// Every client receives the same exponential long-tailed budget with its
/// head rotated to class `k mod M`. Over balanced data the global
/// distribution stays near-balanced.
pub fn partition_rotated_longtail(dataset: &Dataset, spec: &PartitionSpec) -> Result<Partition> {
    check_capacity(dataset, spec)?;
    let local_if = match spec.kind {
        PartitionKind::RotatedLongTail { local_if } => local_if,
        other => {
            return Err(Error::InvalidArgument(format!(
                "partition_rotated_longtail called with {other:?}"
            )))
        }
    };
    let supply = dataset.class_counts();
    let global_if = imbalance_factor_of_counts(&supply)
        .value()
        .unwrap_or(f64::INFINITY);
    if global_if > 1.05 || supply.contains(&0) {
        return Err(Error::InvalidArgument(format!(
            "rotated long-tail partitioning needs balanced data, got imbalance factor {global_if}"
        )));
    }
    let n = spec.num_clients;
    let m = dataset.num_classes();
    let budget = (dataset.len() / n) as u64;
    let base = fit_profile_to_budget(budget, m, local_if)?;

    // demand[k][c]
    let mut demand: Vec<Vec<u64>> = (0..n)
        .map(|k| rotate_profile(&base, k % m).map(|p| p.counts_by_class()))
        .collect::<Result<_>>()?;
    for c in 0..m {
        let total: u64 = demand.iter().map(|d| d[c]).sum();
        if total > supply[c] {
            let weights: Vec<f64> = demand.iter().map(|d| d[c] as f64).collect();
            for (k, share) in largest_remainder(&weights, supply[c] as usize)
                .into_iter()
                .enumerate()
            {
                demand[k][c] = share as u64;
            }
        }
    }

    let mut rng = rng::stream(spec.seed, "partition-rotated", 0, 0);
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (c, mut members) in dataset.indices_by_class().into_iter().enumerate() {
        members.shuffle(&mut rng);
        let mut start = 0;
        for (k, bucket) in buckets.iter_mut().enumerate() {
            let take = demand[k][c] as usize;
            bucket.extend_from_slice(&members[start..start + take]);
            start += take;
        }
    }
    if let Some(k) = buckets.iter().position(|b| b.len() < spec.min_shard_size.max(1)) {
        return Err(Error::InfeasibleSpec(format!(
            "client {k} receives {} samples, below the minimum of {}",
            buckets[k].len(),
            spec.min_shard_size.max(1)
        )));
    }
    Ok(finish(dataset, spec, buckets))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientRow {
    pub client: usize,
    pub counts: Vec<u64>,
    pub n_k: u64,
    pub imbalance_factor: crate::stats::ImbalanceFactor,
    pub empty_classes: usize,
}

/// Client-by-class count matrix with local and global statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionReport {
    pub spec: PartitionSpec,
    pub num_classes: usize,
    pub clients: Vec<ClientRow>,
    pub global: DistributionStats,
}

pub fn partition_report(partition: &Partition) -> PartitionReport {
    let clients = partition
        .stats
        .clients
        .iter()
        .enumerate()
        .map(|(k, s)| ClientRow {
            client: k,
            counts: s.counts.clone(),
            n_k: s.total,
            imbalance_factor: s.imbalance_factor,
            empty_classes: s.empty_classes,
        })
        .collect();
    PartitionReport {
        spec: partition.spec.clone(),
        num_classes: partition.stats.global.num_classes(),
        clients,
        global: partition.stats.global.clone(),
    }
}

impl PartitionReport {
    /// `client,class_0,...,class_{M-1},n_k,IF_L` rows, then a `GLOBAL` row.
    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        let mut header = vec!["client".to_string()];
        header.extend((0..self.num_classes).map(|c| format!("class_{c}")));
        header.push("n_k".into());
        header.push("IF_L".into());
        w.write_record(&header).expect("in-memory write");
        for row in &self.clients {
            let mut rec = vec![row.client.to_string()];
            rec.extend(row.counts.iter().map(u64::to_string));
            rec.push(row.n_k.to_string());
            rec.push(row.imbalance_factor.to_string());
            w.write_record(&rec).expect("in-memory write");
        }
        let mut rec = vec!["GLOBAL".to_string()];
        rec.extend(self.global.counts.iter().map(u64::to_string));
        rec.push(self.global.total.to_string());
        rec.push(self.global.imbalance_factor.to_string());
        w.write_record(&rec).expect("in-memory write");
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii csv")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
