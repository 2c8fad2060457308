//! Local model training: softmax classifiers trained by SGD under
//! simulated CPU speeds, plus evaluation on the server-held test split.

use crate::data::{Dataset, Example};
use crate::error::{Error, Result};
use crate::params::ModelParams;
use crate::scalar::Scalar;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Model family for the learning task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Multinomial logistic regression.
    Linear,
    /// One hidden tanh layer, softmax output.
    Mlp,
}

/// Shape of the task model; fixes the parameter layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub dim: usize,
    pub n_classes: usize,
    /// Hidden width; only used by [`ModelKind::Mlp`].
    pub hidden: usize,
}

impl ModelSpec {
    pub fn linear(dim: usize, n_classes: usize) -> Self {
        Self {
            kind: ModelKind::Linear,
            dim,
            n_classes,
            hidden: 0,
        }
    }

    pub fn mlp(dim: usize, n_classes: usize, hidden: usize) -> Self {
        Self {
            kind: ModelKind::Mlp,
            dim,
            n_classes,
            hidden,
        }
    }

    /// Total flat parameter count.
    pub fn param_dim(&self) -> usize {
        match self.kind {
            ModelKind::Linear => self.n_classes * (self.dim + 1),
            ModelKind::Mlp => self.hidden * (self.dim + 1) + self.n_classes * (self.hidden + 1),
        }
    }

    /// Initial parameters: zeros for the linear model, scaled uniform for
    /// the MLP (zero init would leave hidden units symmetric).
    pub fn init_params<S: Scalar, R: Rng>(&self, rng: &mut R) -> ModelParams<S> {
        match self.kind {
            ModelKind::Linear => ModelParams::zeros(self.param_dim()),
            ModelKind::Mlp => {
                let limit = (6.0 / (self.dim + self.hidden) as f64).sqrt();
                let values = (0..self.param_dim())
                    .map(|_| S::real((rng.gen::<f64>() * 2.0 - 1.0) * limit))
                    .collect();
                ModelParams::from_values(values)
            }
        }
    }

    /// Class logits for one example.
    fn logits<S: Scalar>(&self, params: &ModelParams<S>, x: &[S]) -> Vec<S> {
        let v = params.values();
        match self.kind {
            ModelKind::Linear => {
                let stride = self.dim + 1;
                (0..self.n_classes)
                    .map(|k| {
                        let row = &v[k * stride..(k + 1) * stride];
                        let mut z = row[self.dim];
                        for (w, xi) in row[..self.dim].iter().zip(x) {
                            z = z + *w * *xi;
                        }
                        z
                    })
                    .collect()
            }
            ModelKind::Mlp => {
                let h = self.hidden_activations(params, x);
                self.output_logits(params, &h)
            }
        }
    }

    fn hidden_activations<S: Scalar>(&self, params: &ModelParams<S>, x: &[S]) -> Vec<S> {
        let v = params.values();
        let stride = self.dim + 1;
        (0..self.hidden)
            .map(|j| {
                let row = &v[j * stride..(j + 1) * stride];
                let mut z = row[self.dim];
                for (w, xi) in row[..self.dim].iter().zip(x) {
                    z = z + *w * *xi;
                }
                z.tanh()
            })
            .collect()
    }

    fn output_logits<S: Scalar>(&self, params: &ModelParams<S>, h: &[S]) -> Vec<S> {
        let v = params.values();
        let base = self.hidden * (self.dim + 1);
        let stride = self.hidden + 1;
        (0..self.n_classes)
            .map(|k| {
                let row = &v[base + k * stride..base + (k + 1) * stride];
                let mut z = row[self.hidden];
                for (w, hj) in row[..self.hidden].iter().zip(h) {
                    z = z + *w * *hj;
                }
                z
            })
            .collect()
    }

    /// Predicted class: argmax logit, lowest index on ties.
    pub fn predict<S: Scalar>(&self, params: &ModelParams<S>, x: &[S]) -> usize {
        let logits = self.logits(params, x);
        let mut best = 0;
        for (k, z) in logits.iter().enumerate().skip(1) {
            if *z > logits[best] {
                best = k;
            }
        }
        best
    }

    /// Cross-entropy loss and gradient for one example, accumulated into
    /// `grad` (scaled by `scale`). Returns the loss.
    pub fn loss_grad_example<S: Scalar>(
        &self,
        params: &ModelParams<S>,
        example: &Example<S>,
        scale: S,
        grad: &mut [S],
    ) -> S {
        let x = &example.features;
        let y = example.label;
        match self.kind {
            ModelKind::Linear => {
                let p = softmax(&self.logits(params, x));
                let loss = -(p[y].max(S::real(1e-300))).ln();
                let stride = self.dim + 1;
                for k in 0..self.n_classes {
                    let dz = if k == y { p[k] - S::one() } else { p[k] } * scale;
                    let row = &mut grad[k * stride..(k + 1) * stride];
                    for (g, xi) in row[..self.dim].iter_mut().zip(x) {
                        *g = *g + dz * *xi;
                    }
                    row[self.dim] = row[self.dim] + dz;
                }
                loss
            }
            ModelKind::Mlp => {
                let h = self.hidden_activations(params, x);
                let p = softmax(&self.output_logits(params, &h));
                let loss = -(p[y].max(S::real(1e-300))).ln();
                let v = params.values();
                let out_base = self.hidden * (self.dim + 1);
                let out_stride = self.hidden + 1;
                // Output layer gradient and back-signal into h.
                let mut dh = vec![S::zero(); self.hidden];
                for k in 0..self.n_classes {
                    let dz = if k == y { p[k] - S::one() } else { p[k] } * scale;
                    let row_idx = out_base + k * out_stride;
                    for j in 0..self.hidden {
                        grad[row_idx + j] = grad[row_idx + j] + dz * h[j];
                        dh[j] = dh[j] + (if k == y { p[k] - S::one() } else { p[k] }) * v[row_idx + j];
                    }
                    grad[row_idx + self.hidden] = grad[row_idx + self.hidden] + dz;
                }
                // Hidden layer gradient through tanh.
                let stride = self.dim + 1;
                for j in 0..self.hidden {
                    let dz = dh[j] * (S::one() - h[j] * h[j]) * scale;
                    let row = &mut grad[j * stride..(j + 1) * stride];
                    for (g, xi) in row[..self.dim].iter_mut().zip(x) {
                        *g = *g + dz * *xi;
                    }
                    row[self.dim] = row[self.dim] + dz;
                }
                loss
            }
        }
    }

    /// Mean cross-entropy loss and gradient over a batch.
    pub fn batch_loss_grad<S: Scalar>(
        &self,
        params: &ModelParams<S>,
        batch: &[Example<S>],
    ) -> (S, Vec<S>) {
        let mut grad = vec![S::zero(); self.param_dim()];
        let scale = S::one() / S::real(batch.len() as f64);
        let mut loss = S::zero();
        for e in batch {
            loss = loss + self.loss_grad_example(params, e, scale, &mut grad) * scale;
        }
        (loss, grad)
    }
}

fn softmax<S: Scalar>(logits: &[S]) -> Vec<S> {
    let max = logits.iter().fold(S::neg_infinity(), |a, &b| a.max(b));
    let exps: Vec<S> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: S = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Simulated progress of a trainer with CPU speed `c` (epochs per time
/// unit) over a window of `f` time units: epochs completed and the
/// fraction of the shard left untrained when less than one epoch fits.
pub fn training_progress(c: f64, f: f64) -> (f64, f64) {
    let epochs_done = c * f;
    let untrained = if epochs_done < 1.0 {
        1.0 - epochs_done
    } else {
        0.0
    };
    (epochs_done, untrained)
}

/// Result of one SGD run.
#[derive(Debug, Clone)]
pub struct SgdOutcome<S: Scalar> {
    pub params: ModelParams<S>,
    /// Number of example visits, `floor(epochs * shard size)`.
    pub visits: u64,
    /// Indices (into the shard) left untrained by a fractional final
    /// epoch: the suffix of the last permutation. Empty when `epochs >= 1`.
    pub untrained: Vec<usize>,
    /// Mean per-example loss over the visited examples, if any.
    pub mean_loss: Option<f64>,
}

/// Train by per-example SGD for a possibly fractional number of epochs.
/// Examples are visited in a seeded random permutation per epoch; exactly
/// `floor(epochs * n)` visits are made. The input parameters are not
/// modified.
pub fn train_sgd<S: Scalar, R: Rng>(
    spec: &ModelSpec,
    params: &ModelParams<S>,
    examples: &[Example<S>],
    epochs: f64,
    lr: f64,
    rng: &mut R,
) -> Result<SgdOutcome<S>> {
    if epochs < 0.0 {
        return Err(Error::Training(format!("negative epochs: {epochs}")));
    }
    let n = examples.len();
    let mut out = params.clone();
    let total_visits = (epochs * n as f64).floor() as u64;
    let mut untrained: Vec<usize> = Vec::new();
    let mut loss_sum = 0.0f64;

    let mut grad = vec![S::zero(); spec.param_dim()];
    let mut remaining = total_visits;
    let lr_s = S::real(lr);
    while remaining > 0 {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        let take = remaining.min(n as u64) as usize;
        for &idx in &order[..take] {
            for g in grad.iter_mut() {
                *g = S::zero();
            }
            let loss = spec.loss_grad_example(&out, &examples[idx], S::one(), &mut grad);
            loss_sum += loss.to_f64_lossy();
            for (i, (p, g)) in out.values_mut().iter_mut().zip(grad.iter()).enumerate() {
                if !g.is_finite() {
                    return Err(Error::NonFiniteGradient {
                        index: i,
                        value: g.to_f64_lossy(),
                    });
                }
                *p = *p - lr_s * *g;
            }
        }
        if take < n {
            untrained = order[take..].to_vec();
        } else {
            untrained.clear();
        }
        remaining -= take as u64;
    }
    if total_visits == 0 && n > 0 && epochs > 0.0 {
        // Zero visits still leaves the whole shard untrained this window.
        untrained = (0..n).collect();
    }

    Ok(SgdOutcome {
        params: out,
        visits: total_visits,
        untrained,
        mean_loss: if total_visits > 0 {
            Some(loss_sum / total_visits as f64)
        } else {
            None
        },
    })
}

/// Evaluation result: plain accuracy on a test split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetric {
    pub accuracy: f64,
}

/// Accuracy of `params` on `test`. Pure and deterministic; prediction
/// ties resolve to the lowest class index.
pub fn evaluate<S: Scalar>(spec: &ModelSpec, params: &ModelParams<S>, test: &Dataset<S>) -> EvalMetric {
    let correct = test
        .examples
        .iter()
        .filter(|e| spec.predict(params, &e.features) == e.label)
        .count();
    EvalMetric {
        accuracy: correct as f64 / test.len() as f64,
    }
}
