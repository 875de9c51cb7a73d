//! Gaussian-cluster datasets used as a fast stand-in for image data.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng;

fn default_separation() -> f64 {
    6.0
}

/// Isotropic Gaussian clusters, one per class.
///
/// Class means sit on a seeded axis lattice scaled so that the closest pair
/// of means is exactly `separation * spread` apart; `separation` is never
/// below 4.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub per_class: usize,
    pub dim: usize,
    pub spread: f64,
    #[serde(default = "default_separation")]
    pub separation: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(classes: usize, per_class: usize, dim: usize, spread: f64, seed: u64) -> Self {
        Self {
            classes,
            per_class,
            dim,
            spread,
            separation: default_separation(),
            seed,
        }
    }

    pub fn with_separation(mut self, separation: f64) -> Self {
        self.separation = separation;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.per_class < 1 || self.dim < 1 {
            return Err(Error::InvalidArgument(format!(
                "synthetic dataset needs classes >= 2, per_class >= 1, dim >= 1 (got {}, {}, {})",
                self.classes, self.per_class, self.dim
            )));
        }
        if !(self.spread > 0.0 && self.spread.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "spread must be positive, got {}",
                self.spread
            )));
        }
        if !(self.separation >= 4.0 && self.separation.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "separation must be at least 4, got {}",
                self.separation
            )));
        }
        Ok(())
    }

    /// Class means, `classes x dim`, row-major.
    pub fn means(&self) -> Vec<f64> {
        let mut rng = rng::stream(self.seed, "synthetic-means", 0, 0);
        // shell k holds the points +-k e_a; shells are consumed in order
        let mut points: Vec<(usize, f64)> = Vec::with_capacity(self.classes);
        let mut k = 1.0;
        while points.len() < self.classes {
            let mut shell: Vec<(usize, f64)> = (0..self.dim).flat_map(|a| [(a, k), (a, -k)]).collect();
            shell.shuffle(&mut rng);
            let need = self.classes - points.len();
            points.extend(shell.into_iter().take(need));
            k += 1.0;
        }
        let dist = |p: (usize, f64), q: (usize, f64)| {
            if p.0 == q.0 {
                (p.1 - q.1).abs()
            } else {
                (p.1 * p.1 + q.1 * q.1).sqrt()
            }
        };
        let mut min_d = f64::INFINITY;
        for i in 0..points.len() {
            for j in i + 1..points.len() {
                min_d = min_d.min(dist(points[i], points[j]));
            }
        }
        let scale = self.separation * self.spread / min_d;
        let mut means = vec![0.0; self.classes * self.dim];
        for (c, &(axis, v)) in points.iter().enumerate() {
            means[c * self.dim + axis] = v * scale;
        }
        means
    }

    fn draw(&self, means: &[f64], per_class: usize, purpose: &str, name: String) -> Result<Dataset> {
        let mut rng = rng::stream(self.seed, purpose, 0, 0);
        let mut features = Vec::with_capacity(self.classes * per_class * self.dim);
        let mut labels = Vec::with_capacity(self.classes * per_class);
        for c in 0..self.classes {
            let mean = &means[c * self.dim..(c + 1) * self.dim];
            for _ in 0..per_class {
                for &m in mean {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    features.push((m + self.spread * z) as f32);
                }
                labels.push(c as u32);
            }
        }
        Dataset::new(name, self.classes, self.dim, features, labels)
    }

    pub fn generate(&self) -> Result<Dataset> {
        self.validate()?;
        let means = self.means();
        self.draw(&means, self.per_class, "synthetic-train", self.name("train"))
    }

    /// A training set plus an independent balanced test set drawn from the
    /// same class means.
    pub fn generate_split(&self, test_per_class: usize) -> Result<(Dataset, Dataset)> {
        self.validate()?;
        if test_per_class == 0 {
            return Err(Error::InvalidArgument("test_per_class must be positive".into()));
        }
        let means = self.means();
        Ok((
            self.draw(&means, self.per_class, "synthetic-train", self.name("train"))?,
            self.draw(&means, test_per_class, "synthetic-test", self.name("test"))?,
        ))
    }

    fn name(&self, split: &str) -> String {
        format!("synthetic-m{}-d{}-s{}-{split}", self.classes, self.dim, self.seed)
    }
}

pub fn generate_synthetic(
    num_classes: usize,
    per_class: usize,
    dim: usize,
    cluster_spread: f64,
    seed: u64,
) -> Result<Dataset> {
    SyntheticSpec::new(num_classes, per_class, dim, cluster_spread, seed).generate()
}
