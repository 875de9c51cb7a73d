//! Classifier re-training on federated features.
//!
//! Clients report per-class gradients of the classifier head at the current
//! global model. The server keeps a small set of learnable feature vectors
//! per class, moves them so that the head gradient they induce matches the
//! averaged real gradient, and then re-trains the head on the balanced union
//! of those features. Everything happens in penultimate-feature space; the
//! representation is never touched.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{ClientShard, Dataset};
use crate::error::{Error, Result};
use crate::nn::{features, Batch, Head, ModelConfig, ModelParams};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CreffConfig {
    pub ff_per_class: usize,
    pub ff_steps: usize,
    pub retrain_steps: usize,
    pub ff_lr: f64,
    pub retrain_lr: f64,
}

impl Default for CreffConfig {
    fn default() -> Self {
        Self {
            ff_per_class: 100,
            ff_steps: 100,
            retrain_steps: 300,
            ff_lr: 0.01,
            retrain_lr: 0.1,
        }
    }
}

impl CreffConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ff_per_class == 0 {
            return Err(Error::InvalidArgument("ff_per_class must be >= 1".into()));
        }
        if !(self.ff_lr >= 0.0 && self.retrain_lr >= 0.0) {
            return Err(Error::InvalidArgument("CReFF learning rates must be >= 0".into()));
        }
        Ok(())
    }
}

/// Mean head gradient of each class present in a shard; `None` marks a
/// class the client does not hold.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassHeadGrads {
    pub grads: Vec<Option<Vec<f64>>>,
    pub counts: Vec<u64>,
}

/// Per-class head gradients of the cross-entropy at the frozen global model.
pub fn creff_client_head_grads(
    global: &ModelParams,
    config: &ModelConfig,
    data: &Dataset,
    shard: &ClientShard,
) -> Result<ClassHeadGrads> {
    if shard.is_empty() {
        return Err(Error::EmptyShard {
            client: shard.client_id,
        });
    }
    let (m, f) = (config.num_classes, config.feature_dim());
    let feats = features(global, config, &Batch::new(data, &shard.indices))?;
    let mut by_class: Vec<Vec<f64>> = vec![Vec::new(); m];
    for (row, &i) in feats.chunks_exact(f).zip(&shard.indices) {
        by_class[data.label(i)].extend_from_slice(row);
    }
    let head = Head::new(&global.head, m, f);
    let mut grads = Vec::with_capacity(m);
    let mut counts = Vec::with_capacity(m);
    for (c, rows) in by_class.iter().enumerate() {
        let n = rows.len() / f;
        counts.push(n as u64);
        if n == 0 {
            grads.push(None);
        } else {
            let labels = vec![c; n];
            grads.push(Some(head.loss_and_grad(rows, &labels).1));
        }
    }
    Ok(ClassHeadGrads { grads, counts })
}

/// Learnable per-class feature vectors, `M x K x F` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FederatedFeatures {
    pub num_classes: usize,
    pub per_class: usize,
    pub feature_dim: usize,
    pub values: Vec<f64>,
    /// Whether a class has ever been matched against real gradients.
    pub matched: Vec<bool>,
}

impl FederatedFeatures {
    pub fn gaussian(num_classes: usize, per_class: usize, feature_dim: usize, seed: u64) -> Self {
        let mut rng = rng::stream(seed, "creff-features", 0, 0);
        let values = (0..num_classes * per_class * feature_dim)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        Self {
            num_classes,
            per_class,
            feature_dim,
            values,
            matched: vec![false; num_classes],
        }
    }

    pub fn class(&self, c: usize) -> &[f64] {
        let n = self.per_class * self.feature_dim;
        &self.values[c * n..(c + 1) * n]
    }

    pub fn class_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.per_class * self.feature_dim;
        &mut self.values[c * n..(c + 1) * n]
    }
}

/// `||g_syn - target||^2` where `g_syn` is the mean head gradient induced by
/// `feats`, all labelled `class`.
pub fn matching_loss(head: &Head<'_>, feats: &[f64], class: usize, target: &[f64]) -> f64 {
    let n = feats.len() / head.feature_dim;
    let (_, g) = head.loss_and_grad(feats, &vec![class; n]);
    g.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Matching loss and its gradient with respect to `feats`.
///
/// For a row `f` with probabilities `p`, residual `r = p - e_c`, and
/// `D = g_syn - target` split into `(D_W, d_b)`, the gradient of the row is
/// `(2/K) * (D_W^T r + W^T J (D_W f + d_b))` with `J = diag(p) - p p^T`.
pub fn matching_loss_and_grad(
    head: &Head<'_>,
    feats: &[f64],
    class: usize,
    target: &[f64],
) -> (f64, Vec<f64>) {
    let (m, f) = (head.num_classes, head.feature_dim);
    let k = feats.len() / f;
    let (_, g) = head.loss_and_grad(feats, &vec![class; k]);
    let delta: Vec<f64> = g.iter().zip(target).map(|(a, b)| a - b).collect();
    let loss = delta.iter().map(|d| d * d).sum();
    let (dw, db) = delta.split_at(m * f);
    let w = &head.params[..m * f];
    let mut out = vec![0.0; feats.len()];
    let mut z = vec![0.0; m];
    let mut u = vec![0.0; m];
    let scale = 2.0 / k as f64;
    for (row, grad_row) in feats.chunks_exact(f).zip(out.chunks_exact_mut(f)) {
        head.logits_into(row, &mut z);
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in z.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        z.iter_mut().for_each(|v| *v /= sum);
        // u = D_W f + d_b ; v = J u
        for j in 0..m {
            u[j] = dw[j * f..(j + 1) * f]
                .iter()
                .zip(row)
                .map(|(a, b)| a * b)
                .sum::<f64>()
                + db[j];
        }
        let pu: f64 = z.iter().zip(&u).map(|(p, x)| p * x).sum();
        for j in 0..m {
            let r = z[j] - if j == class { 1.0 } else { 0.0 };
            let v = z[j] * (u[j] - pu);
            let (dwj, wj) = (&dw[j * f..(j + 1) * f], &w[j * f..(j + 1) * f]);
            for t in 0..f {
                grad_row[t] += scale * (r * dwj[t] + v * wj[t]);
            }
        }
    }
    (loss, out)
}

/// Full-batch gradient descent on the head over labelled features.
pub fn retrain_head(
    start: &[f64],
    num_classes: usize,
    feature_dim: usize,
    feats: &[f64],
    labels: &[usize],
    steps: usize,
    lr: f64,
) -> Vec<f64> {
    let mut head = start.to_vec();
    if labels.is_empty() {
        return head;
    }
    for _ in 0..steps {
        let (_, g) = Head::new(&head, num_classes, feature_dim).loss_and_grad(feats, labels);
        for (h, gi) in head.iter_mut().zip(&g) {
            *h -= lr * gi;
        }
    }
    head
}

/// Diagnostics from one server step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreffRound {
    /// Matching loss per class before and after optimization; `None` for
    /// classes nobody reported this round.
    pub matching_loss: Vec<Option<(f64, f64)>>,
    pub skipped_classes: Vec<usize>,
}

/// Server state: the federated features persist across rounds.
#[derive(Debug, Clone)]
pub struct CreffServer {
    pub config: CreffConfig,
    pub features: FederatedFeatures,
}

impl CreffServer {
    pub fn new(config: CreffConfig, num_classes: usize, feature_dim: usize, seed: u64) -> Self {
        Self {
            config,
            features: FederatedFeatures::gaussian(num_classes, config.ff_per_class, feature_dim, seed),
        }
    }

    /// Match features against the averaged client gradients (computed at
    /// `matching_head`), then re-train a copy of `start_head` on them.
    pub fn round(
        &mut self,
        matching_head: &[f64],
        start_head: &[f64],
        client_grads: &[&ClassHeadGrads],
    ) -> Result<(Vec<f64>, CreffRound)> {
        let ff = &mut self.features;
        let (m, f) = (ff.num_classes, ff.feature_dim);
        let head = Head::new(matching_head, m, f);
        let mut report = CreffRound {
            matching_loss: vec![None; m],
            skipped_classes: Vec::new(),
        };
        for c in 0..m {
            let reporting: Vec<&Vec<f64>> = client_grads.iter().filter_map(|g| g.grads[c].as_ref()).collect();
            if reporting.is_empty() {
                report.skipped_classes.push(c);
                continue;
            }
            let mut target = vec![0.0; matching_head.len()];
            for g in &reporting {
                for (t, v) in target.iter_mut().zip(g.iter()) {
                    *t += v;
                }
            }
            target.iter_mut().for_each(|t| *t /= reporting.len() as f64);

            let before = matching_loss(&head, ff.class(c), c, &target);
            let mut after = before;
            for _ in 0..self.config.ff_steps {
                let (loss, grad) = matching_loss_and_grad(&head, ff.class(c), c, &target);
                after = loss;
                for (x, g) in ff.class_mut(c).iter_mut().zip(&grad) {
                    *x -= self.config.ff_lr * g;
                }
            }
            if self.config.ff_steps > 0 {
                after = matching_loss(&head, ff.class(c), c, &target);
            }
            if !after.is_finite() || ff.class(c).iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "federated features of class {c} diverged (matching loss {before} -> {after})"
                )));
            }
            ff.matched[c] = true;
            report.matching_loss[c] = Some((before, after));
        }

        let mut feats = Vec::new();
        let mut labels = Vec::new();
        for c in (0..m).filter(|&c| ff.matched[c]) {
            feats.extend_from_slice(ff.class(c));
            labels.extend(std::iter::repeat_n(c, ff.per_class));
        }
        let head = retrain_head(
            start_head,
            m,
            f,
            &feats,
            &labels,
            self.config.retrain_steps,
            self.config.retrain_lr,
        );
        if head.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("re-trained classifier diverged".into()));
        }
        Ok((head, report))
    }
}
