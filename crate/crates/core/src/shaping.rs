//! Long-tailed class-count profiles and subsampling.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::rng;

/// Per-rank class counts, head first, with the class held at each rank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LtProfile {
    pub target_if: f64,
    pub counts: Vec<u64>,
    /// `class_order[rank]` is the class index that receives `counts[rank]`.
    pub class_order: Vec<usize>,
}

impl LtProfile {
    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Head count over tail count after rounding.
    pub fn realized_if(&self) -> f64 {
        self.counts[0] as f64 / *self.counts.last().unwrap() as f64
    }

    /// Counts indexed by class rather than by rank.
    pub fn counts_by_class(&self) -> Vec<u64> {
        let mut out = vec![0; self.counts.len()];
        for (rank, &class) in self.class_order.iter().enumerate() {
            out[class] = self.counts[rank];
        }
        out
    }
}

/// `counts[j] = floor(n_max * target_if^(-j/(M-1)))`, with the tail forced
/// to `round(n_max / target_if)` so both endpoints hit the ratio exactly.
pub fn exponential_profile(n_max: u64, num_classes: usize, target_if: f64) -> Result<LtProfile> {
    if num_classes < 2 {
        return Err(Error::InvalidArgument(format!(
            "a profile needs at least 2 classes, got {num_classes}"
        )));
    }
    if !(target_if >= 1.0 && target_if.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "imbalance factor must be >= 1, got {target_if}"
        )));
    }
    if (n_max as f64) < target_if {
        return Err(Error::ProfileTooSteep { n_max, target_if });
    }
    let last = num_classes - 1;
    let mut counts: Vec<u64> = (0..num_classes)
        .map(|j| (n_max as f64 * target_if.powf(-(j as f64) / last as f64)).floor() as u64)
        .collect();
    counts[0] = n_max;
    let forced = (n_max as f64 / target_if).round() as u64;
    // keep the profile non-increasing when n_max is tiny
    counts[last] = forced.min(counts[last - 1]);
    if counts[last] == 0 {
        return Err(Error::ProfileTooSteep { n_max, target_if });
    }
    Ok(LtProfile {
        target_if,
        counts,
        class_order: (0..num_classes).collect(),
    })
}

/// Shift which class sits at each rank: rank `j` moves to the class that
/// previously held rank `(j + offset) mod M`.
pub fn rotate_profile(profile: &LtProfile, offset: usize) -> Result<LtProfile> {
    let m = profile.num_classes();
    if offset >= m {
        return Err(Error::InvalidArgument(format!(
            "rotation offset {offset} outside [0, {m})"
        )));
    }
    let class_order = (0..m).map(|j| profile.class_order[(j + offset) % m]).collect();
    Ok(LtProfile {
        target_if: profile.target_if,
        counts: profile.counts.clone(),
        class_order,
    })
}

/// Indices (ascending) of a seeded subsample that matches `profile` exactly.
pub fn shape_long_tailed_indices(dataset: &Dataset, profile: &LtProfile, seed: u64) -> Result<Vec<usize>> {
    if profile.num_classes() != dataset.num_classes() {
        return Err(Error::ShapeMismatch(format!(
            "profile has {} classes, dataset has {}",
            profile.num_classes(),
            dataset.num_classes()
        )));
    }
    let by_class = dataset.indices_by_class();
    let mut rng = rng::stream(seed, "lt-shape", 0, 0);
    let mut chosen = Vec::with_capacity(profile.total() as usize);
    let wanted = profile.counts_by_class();
    for (class, mut members) in by_class.into_iter().enumerate() {
        let need = wanted[class] as usize;
        if members.len() < need {
            return Err(Error::Capacity {
                class,
                needed: need,
                available: members.len(),
            });
        }
        members.shuffle(&mut rng);
        chosen.extend_from_slice(&members[..need]);
    }
    chosen.sort_unstable();
    Ok(chosen)
}

/// Subsample `dataset` without replacement so its class counts equal the profile.
pub fn shape_long_tailed(dataset: &Dataset, profile: &LtProfile, seed: u64) -> Result<Dataset> {
    let idx = shape_long_tailed_indices(dataset, profile, seed)?;
    dataset.subset(&idx, format!("{}-lt{}", dataset.name(), profile.target_if))
}
