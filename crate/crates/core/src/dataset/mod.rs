//! Labeled classification datasets and client-owned index views.

mod cifar;
mod records;
mod synthetic;

pub use cifar::{
    load_cifar10, load_cifar10_dir, read_cifar_file, write_cifar_file, CifarRaw, CIFAR_CLASSES, CIFAR_PIXELS,
    CIFAR_RECORD_LEN,
};
pub use records::{read_records, write_records, RECORD_MAGIC};
pub use synthetic::{generate_synthetic, SyntheticSpec};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// A borrowed view of one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample<'a> {
    pub features: &'a [f32],
    pub label: usize,
}

/// Immutable labeled dataset with row-major feature storage.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    name: String,
    num_classes: usize,
    dim: usize,
    features: Vec<f32>,
    labels: Vec<u32>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        num_classes: usize,
        dim: usize,
        features: Vec<f32>,
        labels: Vec<u32>,
    ) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::InvalidArgument(format!(
                "a dataset needs at least 2 classes, got {num_classes}"
            )));
        }
        if dim == 0 {
            return Err(Error::InvalidArgument(
                "feature dimension must be positive".into(),
            ));
        }
        if features.len() != labels.len() * dim {
            return Err(Error::ShapeMismatch(format!(
                "{} feature values for {} samples of dimension {dim}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= num_classes) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} outside [0, {num_classes})"
            )));
        }
        Ok(Self {
            name: name.into(),
            num_classes,
            dim,
            features,
            labels,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self, i: usize) -> &[f32] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn raw_features(&self) -> &[f32] {
        &self.features
    }

    pub fn sample(&self, i: usize) -> Sample<'_> {
        Sample {
            features: self.features(i),
            label: self.label(i),
        }
    }

    pub fn samples(&self) -> impl Iterator<Item = Sample<'_>> + '_ {
        (0..self.len()).map(move |i| self.sample(i))
    }

    pub fn all_indices(&self) -> Vec<usize> {
        (0..self.len()).collect()
    }

    pub fn class_counts(&self) -> Vec<u64> {
        class_counts(self, &self.all_indices())
    }

    /// Indices of every sample, grouped by label in ascending index order.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut by_class = vec![Vec::new(); self.num_classes];
        for (i, &l) in self.labels.iter().enumerate() {
            by_class[l as usize].push(i);
        }
        by_class
    }

    /// Copy the given samples (in the given order) into a new dataset.
    pub fn subset(&self, indices: &[usize], name: impl Into<String>) -> Result<Self> {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::InvalidArgument(format!(
                    "index {i} out of bounds for dataset of {} samples",
                    self.len()
                )));
            }
            features.extend_from_slice(self.features(i));
            labels.push(self.labels[i]);
        }
        Ok(Self {
            name: name.into(),
            num_classes: self.num_classes,
            dim: self.dim,
            features,
            labels,
        })
    }
}

/// One client's local data: an index view into a parent [`Dataset`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientShard {
    pub client_id: usize,
    pub indices: Vec<usize>,
}

impl ClientShard {
    pub fn new(client_id: usize, indices: Vec<usize>) -> Self {
        Self { client_id, indices }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn class_counts(&self, dataset: &Dataset) -> Vec<u64> {
        class_counts(dataset, &self.indices)
    }
}

/// Per-class sample counts over `indices` of `dataset`.
pub fn class_counts(dataset: &Dataset, indices: &[usize]) -> Vec<u64> {
    let mut counts = vec![0u64; dataset.num_classes()];
    for &i in indices {
        counts[dataset.label(i)] += 1;
    }
    counts
}

/// How many samples of a class go to the held-out side.
fn holdout_count(count: usize, fraction: f64, strict: bool, class: usize) -> Result<usize> {
    if count == 0 {
        return Ok(0);
    }
    // small epsilon so e.g. 0.29 * 100 does not floor to 28
    let floor = (count as f64 * fraction + 1e-9).floor() as usize;
    let h = floor.min(count - 1);
    if strict {
        if count < 2 {
            return Err(Error::DegenerateClass { class, count });
        }
        return Ok(h.max(1));
    }
    Ok(h)
}

fn split_indices(
    dataset: &Dataset,
    indices: &[usize],
    fraction: f64,
    seed: u64,
    strict: bool,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "holdout fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let mut by_class = vec![Vec::new(); dataset.num_classes()];
    for &i in indices {
        by_class[dataset.label(i)].push(i);
    }
    let mut rng = rng::rng_from_seed(seed);
    let mut train = Vec::with_capacity(indices.len());
    let mut held = Vec::new();
    for (class, mut members) in by_class.into_iter().enumerate() {
        let h = holdout_count(members.len(), fraction, strict, class)?;
        members.shuffle(&mut rng);
        held.extend_from_slice(&members[..h]);
        train.extend_from_slice(&members[h..]);
    }
    train.sort_unstable();
    held.sort_unstable();
    Ok((train, held))
}

/// Split `indices` per class into (train, holdout) index lists.
///
/// Each class contributes `floor(count * fraction)` samples to the holdout,
/// capped so that at least one sample of a non-empty class stays in train.
pub fn stratified_split(
    dataset: &Dataset,
    indices: &[usize],
    fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    split_indices(dataset, indices, fraction, seed, false)
}

/// Like [`stratified_split`], but every non-empty class must land on both
/// sides. Classes with a single sample are rejected.
pub fn stratified_split_strict(
    dataset: &Dataset,
    indices: &[usize],
    fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    split_indices(dataset, indices, fraction, seed, true)
}

/// Split a whole dataset into (train, holdout) datasets, class by class.
pub fn stratified_holdout(dataset: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let (train, held) = stratified_split(dataset, &dataset.all_indices(), fraction, seed)?;
    Ok((
        dataset.subset(&train, format!("{}-train", dataset.name()))?,
        dataset.subset(&held, format!("{}-holdout", dataset.name()))?,
    ))
}
