//! A small dense training engine with an explicit representation/classifier
//! split.
//!
//! Parameters live in two flat blocks. The representation block holds every
//! layer up to the penultimate activation (empty for a linear model); the
//! head block holds the final affine classifier `W (M x F)` then `b (M)`.
//! All arithmetic is `f64` and every reduction runs in sample order, so a
//! fixed seed reproduces a training trajectory bit for bit.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::metrics::{ClassGroup, Metrics};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Arch {
    LinearSoftmax,
    Mlp1h { hidden: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub arch: Arch,
    pub input_dim: usize,
    pub num_classes: usize,
    pub init_seed: u64,
}

impl ModelConfig {
    pub fn new(arch: Arch, input_dim: usize, num_classes: usize, init_seed: u64) -> Self {
        Self {
            arch,
            input_dim,
            num_classes,
            init_seed,
        }
    }

    pub fn feature_dim(&self) -> usize {
        match self.arch {
            Arch::LinearSoftmax => self.input_dim,
            Arch::Mlp1h { hidden } => hidden,
        }
    }

    pub fn rep_len(&self) -> usize {
        match self.arch {
            Arch::LinearSoftmax => 0,
            Arch::Mlp1h { hidden } => hidden * self.input_dim + hidden,
        }
    }

    pub fn head_len(&self) -> usize {
        self.num_classes * self.feature_dim() + self.num_classes
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.num_classes < 2 {
            return Err(Error::InvalidArgument(format!(
                "model needs input_dim >= 1 and num_classes >= 2 (got {}, {})",
                self.input_dim, self.num_classes
            )));
        }
        if let Arch::Mlp1h { hidden: 0 } = self.arch {
            return Err(Error::InvalidArgument("hidden units must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub rep: Vec<f64>,
    pub head: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(config: &ModelConfig) -> Self {
        Self {
            rep: vec![0.0; config.rep_len()],
            head: vec![0.0; config.head_len()],
        }
    }

    pub fn len(&self) -> usize {
        self.rep.len() + self.head.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len());
        v.extend_from_slice(&self.rep);
        v.extend_from_slice(&self.head);
        v
    }

    pub fn from_flat(flat: &[f64], rep_len: usize) -> Self {
        Self {
            rep: flat[..rep_len].to_vec(),
            head: flat[rep_len..].to_vec(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.rep.iter().chain(&self.head)
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.rep.iter_mut().chain(self.head.iter_mut())
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }

    pub fn check_shape(&self, config: &ModelConfig) -> Result<()> {
        if self.rep.len() != config.rep_len() || self.head.len() != config.head_len() {
            return Err(Error::ShapeMismatch(format!(
                "params ({}, {}) do not match model ({}, {})",
                self.rep.len(),
                self.head.len(),
                config.rep_len(),
                config.head_len()
            )));
        }
        Ok(())
    }

    pub fn sq_norm(&self) -> f64 {
        self.iter().map(|v| v * v).sum()
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, other: &ModelParams, scale: f64) {
        for (a, b) in self.iter_mut().zip(other.iter()) {
            *a += scale * b;
        }
    }
}

/// Gradient with the same layout as [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradVector {
    pub grad: ModelParams,
    pub batch_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub local_epochs: usize,
    pub weight_decay: f64,
    pub shuffle_seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be a non-negative finite number, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 || self.local_epochs == 0 {
            return Err(Error::InvalidArgument(
                "batch_size and local_epochs must be positive".into(),
            ));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidArgument("weight_decay must be non-negative".into()));
        }
        Ok(())
    }
}

/// A set of rows of a dataset.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub data: &'a Dataset,
    pub indices: &'a [usize],
}

impl<'a> Batch<'a> {
    pub fn new(data: &'a Dataset, indices: &'a [usize]) -> Self {
        Self { data, indices }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

pub fn init_model(config: &ModelConfig) -> ModelParams {
    let mut rng = rng::stream(config.init_seed, "model-init", 0, 0);
    let mut params = ModelParams::zeros(config);
    let mut fill = |w: &mut [f64], fan_in: usize| {
        let bound = 1.0 / (fan_in as f64).sqrt();
        for v in w {
            *v = rng.random_range(-bound..bound);
        }
    };
    let d = config.input_dim;
    let f = config.feature_dim();
    let m = config.num_classes;
    if let Arch::Mlp1h { hidden } = config.arch {
        fill(&mut params.rep[..hidden * d], d);
    }
    fill(&mut params.head[..m * f], f);
    params
}

/// Classifier head viewed over a flat `[W (M x F), b (M)]` block.
#[derive(Debug, Clone, Copy)]
pub struct Head<'a> {
    pub params: &'a [f64],
    pub num_classes: usize,
    pub feature_dim: usize,
}

impl<'a> Head<'a> {
    pub fn new(params: &'a [f64], num_classes: usize, feature_dim: usize) -> Self {
        debug_assert_eq!(params.len(), num_classes * feature_dim + num_classes);
        Self {
            params,
            num_classes,
            feature_dim,
        }
    }

    pub fn logits_into(&self, feature: &[f64], out: &mut [f64]) {
        let f = self.feature_dim;
        let bias = &self.params[self.num_classes * f..];
        for (c, o) in out.iter_mut().enumerate() {
            *o = dot(&self.params[c * f..(c + 1) * f], feature) + bias[c];
        }
    }

    /// Mean cross-entropy over `(features, labels)` and its gradient with
    /// respect to the head block.
    pub fn loss_and_grad(&self, features: &[f64], labels: &[usize]) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.params.len()];
        let loss = self.accumulate(features, labels, 1.0 / labels.len().max(1) as f64, &mut grad);
        (loss, grad)
    }

    /// Adds `scale * d(CE)/d(head)` for every row into `grad`; returns
    /// `scale * sum(CE)`.
    pub fn accumulate(&self, features: &[f64], labels: &[usize], scale: f64, grad: &mut [f64]) -> f64 {
        let (m, f) = (self.num_classes, self.feature_dim);
        let mut z = vec![0.0; m];
        let mut loss = 0.0;
        for (row, &y) in features.chunks_exact(f).zip(labels) {
            self.logits_into(row, &mut z);
            loss += softmax_xent_inplace(&mut z, y) * scale;
            for c in 0..m {
                let dz = z[c] * scale;
                axpy(dz, row, &mut grad[c * f..(c + 1) * f]);
                grad[m * f + c] += dz;
            }
        }
        loss
    }

    pub fn predict(&self, feature: &[f64], scratch: &mut [f64]) -> usize {
        self.logits_into(feature, scratch);
        argmax(scratch)
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// First index of the maximum; ties go to the lower class.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Replace logits `z` by `softmax(z) - onehot(y)` and return `-ln softmax(z)[y]`.
fn softmax_xent_inplace(z: &mut [f64], y: usize) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let shifted_y = z[y] - max;
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
    z[y] -= 1.0;
    sum.ln() - shifted_y
}

/// Per-sample scratch for the representation pass.
struct RepPass {
    x: Vec<f64>,
    pre: Vec<f64>,
    feat: Vec<f64>,
}

impl RepPass {
    fn new(config: &ModelConfig) -> Self {
        Self {
            x: vec![0.0; config.input_dim],
            pre: vec![0.0; config.feature_dim()],
            feat: vec![0.0; config.feature_dim()],
        }
    }

    fn run(&mut self, config: &ModelConfig, rep: &[f64], input: &[f32]) {
        for (d, s) in self.x.iter_mut().zip(input) {
            *d = *s as f64;
        }
        match config.arch {
            Arch::LinearSoftmax => self.feat.copy_from_slice(&self.x),
            Arch::Mlp1h { hidden } => {
                let d = config.input_dim;
                let bias = &rep[hidden * d..];
                for h in 0..hidden {
                    let a = dot(&rep[h * d..(h + 1) * d], &self.x) + bias[h];
                    self.pre[h] = a;
                    self.feat[h] = a.max(0.0);
                }
            }
        }
    }
}

fn check_batch(config: &ModelConfig, batch: &Batch<'_>) -> Result<()> {
    if batch.data.dim() != config.input_dim {
        return Err(Error::ShapeMismatch(format!(
            "batch features have dimension {}, model expects {}",
            batch.data.dim(),
            config.input_dim
        )));
    }
    if batch.data.num_classes() != config.num_classes {
        return Err(Error::ShapeMismatch(format!(
            "dataset has {} classes, model has {}",
            batch.data.num_classes(),
            config.num_classes
        )));
    }
    Ok(())
}

/// Penultimate features for every row of the batch, `rows x F` row-major.
pub fn features(params: &ModelParams, config: &ModelConfig, batch: &Batch<'_>) -> Result<Vec<f64>> {
    check_batch(config, batch)?;
    let f = config.feature_dim();
    let mut pass = RepPass::new(config);
    let mut out = Vec::with_capacity(batch.len() * f);
    for &i in batch.indices {
        pass.run(config, &params.rep, batch.data.features(i));
        out.extend_from_slice(&pass.feat);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Activations {
    pub rows: usize,
    /// `rows x feature_dim`
    pub features: Vec<f64>,
    /// `rows x num_classes`
    pub logits: Vec<f64>,
}

pub fn forward(params: &ModelParams, config: &ModelConfig, batch: &Batch<'_>) -> Result<Activations> {
    check_batch(config, batch)?;
    for &i in batch.indices {
        if batch.data.features(i).iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("input row {i}")));
        }
    }
    let feats = features(params, config, batch)?;
    let (m, f) = (config.num_classes, config.feature_dim());
    let head = Head::new(&params.head, m, f);
    let mut logits = vec![0.0; batch.len() * m];
    for (row, out) in feats.chunks_exact(f).zip(logits.chunks_exact_mut(m)) {
        head.logits_into(row, out);
    }
    Ok(Activations {
        rows: batch.len(),
        features: feats,
        logits,
    })
}

/// Accumulate the mean cross-entropy gradient of `batch` into `grad` (which
/// must be zeroed by the caller) and return the mean cross-entropy.
fn xent_grad_into(
    params: &ModelParams,
    config: &ModelConfig,
    batch: &Batch<'_>,
    grad: &mut ModelParams,
) -> f64 {
    let (m, f, d) = (config.num_classes, config.feature_dim(), config.input_dim);
    let scale = 1.0 / batch.len() as f64;
    let mut pass = RepPass::new(config);
    let mut z = vec![0.0; m];
    let mut dfeat = vec![0.0; f];
    let head = Head::new(&params.head, m, f);
    let mut loss = 0.0;
    for &i in batch.indices {
        pass.run(config, &params.rep, batch.data.features(i));
        head.logits_into(&pass.feat, &mut z);
        loss += softmax_xent_inplace(&mut z, batch.data.label(i)) * scale;
        for c in 0..m {
            let dz = z[c] * scale;
            axpy(dz, &pass.feat, &mut grad.head[c * f..(c + 1) * f]);
            grad.head[m * f + c] += dz;
        }
        if let Arch::Mlp1h { hidden } = config.arch {
            dfeat.iter_mut().for_each(|v| *v = 0.0);
            for c in 0..m {
                axpy(z[c] * scale, &params.head[c * f..(c + 1) * f], &mut dfeat);
            }
            let (gw, gb) = grad.rep.split_at_mut(hidden * d);
            for h in 0..hidden {
                if pass.pre[h] > 0.0 {
                    axpy(dfeat[h], &pass.x, &mut gw[h * d..(h + 1) * d]);
                    gb[h] += dfeat[h];
                }
            }
        }
    }
    loss
}

/// Mean cross-entropy plus `(weight_decay / 2) * ||params||^2`, and its
/// gradient.
pub fn loss_and_grad(
    params: &ModelParams,
    config: &ModelConfig,
    batch: &Batch<'_>,
    weight_decay: f64,
) -> Result<(f64, GradVector)> {
    check_batch(config, batch)?;
    params.check_shape(config)?;
    if batch.is_empty() {
        return Err(Error::EmptyInput("loss over an empty batch".into()));
    }
    let mut grad = ModelParams::zeros(config);
    let mut loss = xent_grad_into(params, config, batch, &mut grad);
    if weight_decay > 0.0 {
        loss += 0.5 * weight_decay * params.sq_norm();
        grad.add_scaled(params, weight_decay);
    }
    Ok((
        loss,
        GradVector {
            grad,
            batch_size: batch.len(),
        },
    ))
}

/// Extra gradient term added to every mini-batch gradient.
pub type GradHook<'a> = &'a (dyn Fn(&ModelParams, &mut ModelParams) + Sync);

/// `local_epochs` epochs of mini-batch SGD over `indices`, reshuffling each
/// epoch. The final short batch is kept.
pub fn sgd_epochs(
    params: &ModelParams,
    config: &ModelConfig,
    train: &TrainConfig,
    data: &Dataset,
    indices: &[usize],
    hook: Option<GradHook<'_>>,
) -> Result<ModelParams> {
    if indices.is_empty() {
        return Err(Error::EmptyInput("SGD over an empty shard".into()));
    }
    train.validate()?;
    params.check_shape(config)?;
    check_batch(config, &Batch::new(data, indices))?;
    let mut w = params.clone();
    let mut grad = ModelParams::zeros(config);
    let mut order = indices.to_vec();
    let mut rng = rng::rng_from_seed(train.shuffle_seed);
    for _ in 0..train.local_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(train.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            xent_grad_into(&w, config, &Batch::new(data, chunk), &mut grad);
            if train.weight_decay > 0.0 {
                grad.add_scaled(&w, train.weight_decay);
            }
            if let Some(h) = hook {
                h(&w, &mut grad);
            }
            w.add_scaled(&grad, -train.learning_rate);
        }
    }
    if !w.is_finite() {
        return Err(Error::NonFinite("parameters diverged during local SGD".into()));
    }
    Ok(w)
}

/// Top-1 accuracy overall, per class, and per class group.
pub fn evaluate(
    params: &ModelParams,
    config: &ModelConfig,
    batch: &Batch<'_>,
    groups: Option<&[ClassGroup]>,
) -> Result<Metrics> {
    check_batch(config, batch)?;
    if batch.is_empty() {
        return Err(Error::EmptyInput("evaluation over an empty dataset".into()));
    }
    let (m, f) = (config.num_classes, config.feature_dim());
    let head = Head::new(&params.head, m, f);
    let mut pass = RepPass::new(config);
    let mut z = vec![0.0; m];
    let mut correct = vec![0u64; m];
    let mut totals = vec![0u64; m];
    for &i in batch.indices {
        pass.run(config, &params.rep, batch.data.features(i));
        let y = batch.data.label(i);
        totals[y] += 1;
        if head.predict(&pass.feat, &mut z) == y {
            correct[y] += 1;
        }
    }
    Ok(Metrics::from_tallies(&correct, &totals, groups))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(labels: &[u32], feats: &[f32], dim: usize, m: usize) -> Dataset {
        Dataset::new("tiny", m, dim, feats.to_vec(), labels.to_vec()).unwrap()
    }

    #[test]
    fn init_is_seeded_with_zero_biases() {
        let cfg = ModelConfig::new(Arch::Mlp1h { hidden: 5 }, 4, 3, 9);
        let a = init_model(&cfg);
        assert_eq!(a, init_model(&cfg));
        assert!(a.rep[20..].iter().all(|&b| b == 0.0));
        assert!(a.head[15..].iter().all(|&b| b == 0.0));
        let bound = 0.5;
        assert!(a.rep[..20].iter().all(|w| w.abs() <= bound));
    }

    #[test]
    fn linear_shapes() {
        let cfg = ModelConfig::new(Arch::LinearSoftmax, 4, 3, 0);
        let p = init_model(&cfg);
        assert_eq!(p.head.len(), 15);
        assert!(p.rep.is_empty());
    }

    #[test]
    fn zero_weights_give_uniform_softmax() {
        let cfg = ModelConfig::new(Arch::Mlp1h { hidden: 3 }, 2, 4, 0);
        let d = tiny(&[0, 1, 3], &[1.0, 2.0, -1.0, 0.5, 3.0, 3.0], 2, 4);
        let p = ModelParams::zeros(&cfg);
        let b = Batch::new(&d, &[0, 1, 2]);
        let act = forward(&p, &cfg, &b).unwrap();
        assert!(act.logits.iter().all(|&z| z == 0.0));
        let (loss, _) = loss_and_grad(&p, &cfg, &b, 0.0).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn linear_features_are_inputs() {
        let cfg = ModelConfig::new(Arch::LinearSoftmax, 2, 2, 0);
        let d = tiny(&[0, 1], &[1.5, -2.0, 0.25, 4.0], 2, 2);
        let act = forward(&init_model(&cfg), &cfg, &Batch::new(&d, &[1, 0])).unwrap();
        assert_eq!(act.features, vec![0.25, 4.0, 1.5, -2.0]);
    }

    #[test]
    fn hand_computed_forward() {
        // one hidden unit: h = relu(1*x0 - 2*x1 + 0.5)
        // logits = [3h + 1, -h]
        let cfg = ModelConfig::new(Arch::Mlp1h { hidden: 1 }, 2, 2, 0);
        let p = ModelParams {
            rep: vec![1.0, -2.0, 0.5],
            head: vec![3.0, -1.0, 1.0, 0.0],
        };
        let d = tiny(&[0, 1], &[2.0, 0.5, 0.0, 1.0], 2, 2);
        let act = forward(&p, &cfg, &Batch::new(&d, &[0, 1])).unwrap();
        // sample 0: h = 2 - 1 + 0.5 = 1.5 -> [5.5, -1.5]
        // sample 1: h = relu(-1.5) = 0 -> [1, 0]
        assert_eq!(act.features, vec![1.5, 0.0]);
        assert_eq!(act.logits, vec![5.5, -1.5, 1.0, 0.0]);
    }

    #[test]
    fn non_finite_input_rejected() {
        let cfg = ModelConfig::new(Arch::LinearSoftmax, 1, 2, 0);
        let d = tiny(&[0], &[f32::NAN], 1, 2);
        assert!(matches!(
            forward(&init_model(&cfg), &cfg, &Batch::new(&d, &[0])),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn duplicating_batch_is_invariant() {
        let cfg = ModelConfig::new(Arch::Mlp1h { hidden: 4 }, 3, 3, 2);
        let d = crate::dataset::generate_synthetic(3, 4, 3, 0.5, 1).unwrap();
        let p = init_model(&cfg);
        let idx: Vec<usize> = (0..12).collect();
        let dup: Vec<usize> = idx.iter().flat_map(|&i| [i, i]).collect();
        let (l1, g1) = loss_and_grad(&p, &cfg, &Batch::new(&d, &idx), 0.01).unwrap();
        let (l2, g2) = loss_and_grad(&p, &cfg, &Batch::new(&d, &dup), 0.01).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
        for (a, b) in g1.grad.iter().zip(g2.grad.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let cfg = ModelConfig::new(Arch::Mlp1h { hidden: 4 }, 3, 3, 2);
        let d = crate::dataset::generate_synthetic(3, 5, 3, 0.5, 1).unwrap();
        let p = init_model(&cfg);
        let tc = TrainConfig {
            learning_rate: 0.0,
            batch_size: 4,
            local_epochs: 3,
            weight_decay: 0.0,
            shuffle_seed: 1,
        };
        let out = sgd_epochs(&p, &cfg, &tc, &d, &d.all_indices(), None).unwrap();
        assert_eq!(out, p);
    }

    #[test]
    fn full_batch_epoch_is_one_step() {
        let cfg = ModelConfig::new(Arch::Mlp1h { hidden: 4 }, 3, 3, 2);
        let d = crate::dataset::generate_synthetic(3, 5, 3, 0.5, 1).unwrap();
        let p = init_model(&cfg);
        let idx = d.all_indices();
        let tc = TrainConfig {
            learning_rate: 0.3,
            batch_size: idx.len(),
            local_epochs: 1,
            weight_decay: 0.0,
            shuffle_seed: 5,
        };
        let out = sgd_epochs(&p, &cfg, &tc, &d, &idx, None).unwrap();
        let (_, g) = loss_and_grad(&p, &cfg, &Batch::new(&d, &idx), 0.0).unwrap();
        let mut expect = p.clone();
        expect.add_scaled(&g.grad, -0.3);
        for (a, b) in out.iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_shard_rejected() {
        let cfg = ModelConfig::new(Arch::LinearSoftmax, 3, 3, 2);
        let d = crate::dataset::generate_synthetic(3, 5, 3, 0.5, 1).unwrap();
        let tc = TrainConfig {
            learning_rate: 0.1,
            batch_size: 4,
            local_epochs: 1,
            weight_decay: 0.0,
            shuffle_seed: 1,
        };
        assert!(sgd_epochs(&init_model(&cfg), &cfg, &tc, &d, &[], None).is_err());
    }

    #[test]
    fn constant_prediction_accuracy() {
        // all-zero model predicts class 0 (lowest index wins ties)
        let cfg = ModelConfig::new(Arch::LinearSoftmax, 2, 10, 0);
        let d = crate::dataset::generate_synthetic(10, 7, 2, 0.5, 1).unwrap();
        let m = evaluate(
            &ModelParams::zeros(&cfg),
            &cfg,
            &Batch::new(&d, &d.all_indices()),
            None,
        )
        .unwrap();
        assert!((m.accuracy - 0.1).abs() < 1e-12);
        assert_eq!(m.per_class[0], Some(1.0));
        assert_eq!(m.per_class[1], Some(0.0));
    }

    #[test]
    fn flat_round_trip() {
        let cfg = ModelConfig::new(Arch::Mlp1h { hidden: 3 }, 2, 2, 4);
        let p = init_model(&cfg);
        assert_eq!(ModelParams::from_flat(&p.to_flat(), cfg.rep_len()), p);
    }

    #[test]
    fn argmax_prefers_lower_index() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
    }
}
