//! Class distributions and imbalance factors of shards and partitions.
//!
//! A class count of zero has no meaningful ratio, so imbalance factors take
//! the minimum over *non-empty* classes and report the number of empty
//! classes alongside.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::dataset::{class_counts, ClientShard, Dataset};
use crate::error::{Error, Result};

/// max/min class-count ratio, or a marker when no class is populated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ImbalanceFactor {
    Value(f64),
    Undefined { empty_classes: usize },
}

impl ImbalanceFactor {
    pub fn value(&self) -> Option<f64> {
        match self {
            ImbalanceFactor::Value(v) => Some(*v),
            ImbalanceFactor::Undefined { .. } => None,
        }
    }
}

impl fmt::Display for ImbalanceFactor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ImbalanceFactor::Value(v) => write!(f, "{v}"),
            ImbalanceFactor::Undefined { empty_classes } => {
                write!(f, "undefined(empty-classes={empty_classes})")
            }
        }
    }
}

impl Serialize for ImbalanceFactor {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            ImbalanceFactor::Value(v) => s.serialize_f64(*v),
            u @ ImbalanceFactor::Undefined { .. } => s.serialize_str(&u.to_string()),
        }
    }
}

impl<'de> Deserialize<'de> for ImbalanceFactor {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(ImbalanceFactor::Value(v)),
            Repr::Text(t) => t
                .strip_prefix("undefined(empty-classes=")
                .and_then(|r| r.strip_suffix(')'))
                .and_then(|n| n.parse().ok())
                .map(|empty_classes| ImbalanceFactor::Undefined { empty_classes })
                .ok_or_else(|| serde::de::Error::custom(format!("bad imbalance factor {t:?}"))),
        }
    }
}

/// `max_j counts[j] / min_{s: counts[s] > 0} counts[s]`.
pub fn imbalance_factor_of_counts(counts: &[u64]) -> ImbalanceFactor {
    let empty_classes = counts.iter().filter(|&&c| c == 0).count();
    let max = counts.iter().copied().max().unwrap_or(0);
    match counts.iter().copied().filter(|&c| c > 0).min() {
        Some(min) => ImbalanceFactor::Value(max as f64 / min as f64),
        None => ImbalanceFactor::Undefined { empty_classes },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionStats {
    pub counts: Vec<u64>,
    pub probs: Vec<f64>,
    pub total: u64,
    pub imbalance_factor: ImbalanceFactor,
    pub empty_classes: usize,
    /// Shannon entropy of `probs`, in nats.
    pub entropy: f64,
}

impl DistributionStats {
    pub fn from_counts(counts: Vec<u64>) -> Self {
        let total: u64 = counts.iter().sum();
        let probs: Vec<f64> = if total == 0 {
            vec![0.0; counts.len()]
        } else {
            counts.iter().map(|&c| c as f64 / total as f64).collect()
        };
        let entropy = -probs
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| p * p.ln())
            .sum::<f64>();
        Self {
            imbalance_factor: imbalance_factor_of_counts(&counts),
            empty_classes: counts.iter().filter(|&&c| c == 0).count(),
            counts,
            probs,
            total,
            entropy,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }
}

/// Class distribution of one client's shard.
pub fn local_distribution(shard: &ClientShard, dataset: &Dataset) -> Result<DistributionStats> {
    if shard.is_empty() {
        return Err(Error::EmptyShard {
            client: shard.client_id,
        });
    }
    check_indices(&shard.indices, dataset)?;
    Ok(DistributionStats::from_counts(shard.class_counts(dataset)))
}

/// Class distribution of the union of all shards.
pub fn global_distribution(shards: &[ClientShard], dataset: &Dataset) -> Result<DistributionStats> {
    let mut seen = vec![false; dataset.len()];
    let mut counts = vec![0u64; dataset.num_classes()];
    for shard in shards {
        check_indices(&shard.indices, dataset)?;
        for &i in &shard.indices {
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::InvalidArgument(format!(
                    "sample {i} appears in more than one shard"
                )));
            }
        }
        for (acc, c) in counts.iter_mut().zip(class_counts(dataset, &shard.indices)) {
            *acc += c;
        }
    }
    if counts.iter().all(|&c| c == 0) {
        return Err(Error::EmptyPartition);
    }
    Ok(DistributionStats::from_counts(counts))
}

pub fn local_imbalance_factor(stats: &DistributionStats) -> Result<f64> {
    stats
        .imbalance_factor
        .value()
        .ok_or_else(|| Error::EmptyInput("imbalance factor of an empty distribution".into()))
}

pub fn global_imbalance_factor(shards: &[ClientShard], dataset: &Dataset) -> Result<f64> {
    local_imbalance_factor(&global_distribution(shards, dataset)?)
}

fn check_indices(indices: &[usize], dataset: &Dataset) -> Result<()> {
    match indices.iter().find(|&&i| i >= dataset.len()) {
        Some(i) => Err(Error::InvalidArgument(format!(
            "shard index {i} out of bounds for dataset of {} samples",
            dataset.len()
        ))),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dataset_from_counts(counts: &[u64]) -> Dataset {
        let labels: Vec<u32> = counts
            .iter()
            .enumerate()
            .flat_map(|(c, &n)| std::iter::repeat_n(c as u32, n as usize))
            .collect();
        let features = vec![0.0; labels.len()];
        Dataset::new("t", counts.len(), 1, features, labels).unwrap()
    }

    #[test]
    fn local_probs() {
        let s = DistributionStats::from_counts(vec![3, 1, 0, 0]);
        assert_eq!(s.probs, vec![0.75, 0.25, 0.0, 0.0]);
        assert_eq!(s.total, 4);
        let u = DistributionStats::from_counts(vec![2, 2, 2]);
        for p in &u.probs {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn imbalance_factor_cases() {
        let f = |c: Vec<u64>| local_imbalance_factor(&DistributionStats::from_counts(c)).unwrap();
        assert_eq!(f(vec![100, 50, 10]), 10.0);
        assert_eq!(f(vec![7, 7, 7]), 1.0);
        let s = DistributionStats::from_counts(vec![100, 0, 10]);
        assert_eq!(local_imbalance_factor(&s).unwrap(), 10.0);
        assert_eq!(s.empty_classes, 1);
    }

    #[test]
    fn empty_shard_errors() {
        let d = dataset_from_counts(&[2, 2]);
        let err = local_distribution(&ClientShard::new(4, vec![]), &d).unwrap_err();
        assert!(matches!(err, Error::EmptyShard { client: 4 }));
        let empty = [ClientShard::new(0, vec![]), ClientShard::new(1, vec![])];
        assert!(matches!(
            global_distribution(&empty, &d),
            Err(Error::EmptyPartition)
        ));
    }

    #[test]
    fn type3_symmetry() {
        // client 0 holds [90, 10], client 1 holds [10, 90]
        let d = dataset_from_counts(&[100, 100]);
        let a: Vec<usize> = (0..90).chain(100..110).collect();
        let b: Vec<usize> = (90..100).chain(110..200).collect();
        let shards = [ClientShard::new(0, a), ClientShard::new(1, b)];
        let g = global_distribution(&shards, &d).unwrap();
        assert_eq!(g.counts, vec![100, 100]);
        assert_eq!(g.probs, vec![0.5, 0.5]);
        assert_eq!(global_imbalance_factor(&shards, &d).unwrap(), 1.0);
    }

    #[test]
    fn single_shard_equals_local() {
        let d = dataset_from_counts(&[5, 3, 1]);
        let shard = ClientShard::new(0, vec![0, 2, 5, 6, 8]);
        let l = local_distribution(&shard, &d).unwrap();
        let g = global_distribution(std::slice::from_ref(&shard), &d).unwrap();
        assert_eq!(l, g);
    }

    #[test]
    fn overlapping_shards_are_rejected() {
        let d = dataset_from_counts(&[2, 2]);
        let shards = [ClientShard::new(0, vec![0, 1]), ClientShard::new(1, vec![1, 2])];
        assert!(global_distribution(&shards, &d).is_err());
    }

    #[test]
    fn json_marker() {
        let s = DistributionStats::from_counts(vec![0, 0, 0]);
        let j = serde_json::to_value(&s).unwrap();
        assert_eq!(j["imbalance_factor"], "undefined(empty-classes=3)");
        let back: DistributionStats = serde_json::from_value(j).unwrap();
        assert_eq!(
            back.imbalance_factor,
            ImbalanceFactor::Undefined { empty_classes: 3 }
        );
        let s = DistributionStats::from_counts(vec![4, 1]);
        let j = serde_json::to_value(&s).unwrap();
        assert_eq!(j["imbalance_factor"], 4.0);
    }

    proptest! {
        #[test]
        fn scale_invariance(counts in prop::collection::vec(1u64..500, 2..12), k in 1u64..20) {
            let a = imbalance_factor_of_counts(&counts).value().unwrap();
            let scaled: Vec<u64> = counts.iter().map(|c| c * k).collect();
            let b = imbalance_factor_of_counts(&scaled).value().unwrap();
            prop_assert_eq!(a, b);
            prop_assert!(a >= 1.0);
        }

        #[test]
        fn permutation_equivariance(counts in prop::collection::vec(0u64..500, 2..12), rot in 0usize..12) {
            prop_assume!(counts.iter().any(|&c| c > 0));
            let r = rot % counts.len();
            let mut permuted = counts.clone();
            permuted.rotate_left(r);
            let a = DistributionStats::from_counts(counts.clone());
            let b = DistributionStats::from_counts(permuted);
            let mut expect = a.probs.clone();
            expect.rotate_left(r);
            prop_assert_eq!(&b.probs, &expect);
            prop_assert_eq!(a.imbalance_factor, b.imbalance_factor);
        }

        #[test]
        fn probs_sum_to_one(counts in prop::collection::vec(0u64..10_000, 2..20)) {
            prop_assume!(counts.iter().any(|&c| c > 0));
            let s = DistributionStats::from_counts(counts);
            prop_assert!((s.probs.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }
}
