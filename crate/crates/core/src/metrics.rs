//! Accuracy metrics and head/medium/tail class grouping.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassGroup {
    Head,
    Medium,
    Tail,
}

/// Training-count cutoffs: `count > head_above` is head, `count < tail_below`
/// is tail, anything else medium.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupThresholds {
    pub head_above: f64,
    pub tail_below: f64,
}

/// Cutoffs for a 5000-sample head class; other scales are proportional.
pub const CIFAR_THRESHOLDS: GroupThresholds = GroupThresholds {
    head_above: 1000.0,
    tail_below: 200.0,
};
const CIFAR_HEAD_COUNT: f64 = 5000.0;

impl GroupThresholds {
    /// CIFAR cutoffs rescaled by `max(counts) / 5000`.
    pub fn scaled_for(counts: &[u64]) -> Self {
        let max = counts.iter().copied().max().unwrap_or(0) as f64;
        let s = max / CIFAR_HEAD_COUNT;
        Self {
            head_above: CIFAR_THRESHOLDS.head_above * s,
            tail_below: CIFAR_THRESHOLDS.tail_below * s,
        }
    }
}

pub fn head_tail_groups(train_counts: &[u64], thresholds: GroupThresholds) -> Vec<ClassGroup> {
    train_counts
        .iter()
        .map(|&c| {
            let c = c as f64;
            if c > thresholds.head_above {
                ClassGroup::Head
            } else if c < thresholds.tail_below {
                ClassGroup::Tail
            } else {
                ClassGroup::Medium
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GroupAccuracy {
    pub head: Option<f64>,
    pub medium: Option<f64>,
    pub tail: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub samples: u64,
    pub accuracy: f64,
    /// `None` for classes absent from the evaluated data.
    pub per_class: Vec<Option<f64>>,
    pub class_counts: Vec<u64>,
    pub groups: GroupAccuracy,
}

impl Metrics {
    /// Build from per-class (correct, total) tallies.
    pub fn from_tallies(correct: &[u64], totals: &[u64], groups: Option<&[ClassGroup]>) -> Self {
        let samples: u64 = totals.iter().sum();
        let hits: u64 = correct.iter().sum();
        let per_class = correct
            .iter()
            .zip(totals)
            .map(|(&c, &t)| (t > 0).then(|| c as f64 / t as f64))
            .collect();
        let mut g = GroupAccuracy::default();
        if let Some(groups) = groups {
            let acc = |which: ClassGroup| {
                let (c, t) = groups
                    .iter()
                    .enumerate()
                    .filter(|(_, &gr)| gr == which)
                    .fold((0u64, 0u64), |(c, t), (i, _)| (c + correct[i], t + totals[i]));
                (t > 0).then(|| c as f64 / t as f64)
            };
            g = GroupAccuracy {
                head: acc(ClassGroup::Head),
                medium: acc(ClassGroup::Medium),
                tail: acc(ClassGroup::Tail),
            };
        }
        Self {
            samples,
            accuracy: if samples > 0 {
                hits as f64 / samples as f64
            } else {
                0.0
            },
            per_class,
            class_counts: totals.to_vec(),
            groups: g,
        }
    }
}
