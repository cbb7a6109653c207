//! Small native learners: softmax regression and a one-hidden-layer
//! perceptron, trained by full-batch gradient descent on cross-entropy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flsim::data::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LearnerSpec {
    Softmax {
        n_features: usize,
        n_classes: usize,
    },
    Mlp {
        n_features: usize,
        hidden: usize,
        n_classes: usize,
    },
}

impl LearnerSpec {
    pub fn n_params(&self) -> usize {
        match *self {
            LearnerSpec::Softmax {
                n_features,
                n_classes,
            } => n_classes * (n_features + 1),
            LearnerSpec::Mlp {
                n_features,
                hidden,
                n_classes,
            } => hidden * (n_features + 1) + n_classes * (hidden + 1),
        }
    }

    pub fn n_classes(&self) -> usize {
        match *self {
            LearnerSpec::Softmax { n_classes, .. } => n_classes,
            LearnerSpec::Mlp { n_classes, .. } => n_classes,
        }
    }

    pub fn init_params(&self) -> Vec<f64> {
        vec![0.0; self.n_params()]
    }
}

/// The global model state exchanged each round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalModel {
    pub params: Vec<f64>,
    pub round: u64,
    pub spec: LearnerSpec,
    pub step_size: f64,
}

impl GlobalModel {
    pub fn new(spec: LearnerSpec, step_size: f64) -> Self {
        GlobalModel {
            params: spec.init_params(),
            round: 0,
            spec,
            step_size,
        }
    }

    pub fn check_finite(&self) -> Result<()> {
        if self.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Numerical(format!(
                "global model diverged at round {} (NaN/Inf parameter)",
                self.round
            )));
        }
        Ok(())
    }
}

fn softmax_logits_into(probs: &mut [f64]) {
    let max = probs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for p in probs.iter_mut() {
        *p = (*p - max).exp();
        sum += *p;
    }
    for p in probs.iter_mut() {
        *p /= sum;
    }
}

/// Mean cross-entropy loss and its gradient over `idx`.
pub fn loss_grad(
    spec: &LearnerSpec,
    params: &[f64],
    data: &Dataset,
    idx: &[usize],
) -> Result<(f64, Vec<f64>)> {
    if params.len() != spec.n_params() {
        return Err(Error::DimensionMismatch {
            expected: spec.n_params(),
            got: params.len(),
        });
    }
    if idx.is_empty() {
        return Err(Error::Config("loss_grad on an empty index set".into()));
    }
    match *spec {
        LearnerSpec::Softmax {
            n_features,
            n_classes,
        } => {
            let mut grad = vec![0.0; params.len()];
            let mut loss = 0.0;
            let mut probs = vec![0.0; n_classes];
            let inv = 1.0 / idx.len() as f64;
            for &i in idx {
                let x = data.row(i);
                for c in 0..n_classes {
                    let w = &params[c * (n_features + 1)..(c + 1) * (n_features + 1)];
                    let mut z = w[n_features]; // bias
                    for d in 0..n_features {
                        z += w[d] * x[d];
                    }
                    probs[c] = z;
                }
                softmax_logits_into(&mut probs);
                let y = data.labels[i];
                loss -= probs[y].max(1e-300).ln() * inv;
                for c in 0..n_classes {
                    let delta = (probs[c] - if c == y { 1.0 } else { 0.0 }) * inv;
                    let g = &mut grad[c * (n_features + 1)..(c + 1) * (n_features + 1)];
                    for d in 0..n_features {
                        g[d] += delta * x[d];
                    }
                    g[n_features] += delta;
                }
            }
            Ok((loss, grad))
        }
        LearnerSpec::Mlp {
            n_features,
            hidden,
            n_classes,
        } => {
            let (w1, w2) = params.split_at(hidden * (n_features + 1));
            let mut g1 = vec![0.0; w1.len()];
            let mut g2 = vec![0.0; w2.len()];
            let mut loss = 0.0;
            let inv = 1.0 / idx.len() as f64;
            let mut h = vec![0.0; hidden];
            let mut probs = vec![0.0; n_classes];
            for &i in idx {
                let x = data.row(i);
                for j in 0..hidden {
                    let w = &w1[j * (n_features + 1)..(j + 1) * (n_features + 1)];
                    let mut z = w[n_features];
                    for d in 0..n_features {
                        z += w[d] * x[d];
                    }
                    h[j] = z.tanh();
                }
                for c in 0..n_classes {
                    let w = &w2[c * (hidden + 1)..(c + 1) * (hidden + 1)];
                    let mut z = w[hidden];
                    for j in 0..hidden {
                        z += w[j] * h[j];
                    }
                    probs[c] = z;
                }
                softmax_logits_into(&mut probs);
                let y = data.labels[i];
                loss -= probs[y].max(1e-300).ln() * inv;
                let mut dh = vec![0.0; hidden];
                for c in 0..n_classes {
                    let delta = (probs[c] - if c == y { 1.0 } else { 0.0 }) * inv;
                    let w = &w2[c * (hidden + 1)..(c + 1) * (hidden + 1)];
                    let g = &mut g2[c * (hidden + 1)..(c + 1) * (hidden + 1)];
                    for j in 0..hidden {
                        g[j] += delta * h[j];
                        dh[j] += delta * w[j];
                    }
                    g[hidden] += delta;
                }
                for j in 0..hidden {
                    let dz = dh[j] * (1.0 - h[j] * h[j]);
                    let g = &mut g1[j * (n_features + 1)..(j + 1) * (n_features + 1)];
                    for d in 0..n_features {
                        g[d] += dz * x[d];
                    }
                    g[n_features] += dz;
                }
            }
            let mut grad = g1;
            grad.extend(g2);
            Ok((loss, grad))
        }
    }
}

/// Local update: `epochs` full-batch gradient steps on the offered subset.
/// An empty subset returns the parameters unchanged (with `trained=false`).
pub fn local_train(
    spec: &LearnerSpec,
    params: &[f64],
    data: &Dataset,
    idx: &[usize],
    step_size: f64,
    epochs: usize,
) -> Result<(Vec<f64>, bool)> {
    if idx.is_empty() {
        return Ok((params.to_vec(), false));
    }
    let mut w = params.to_vec();
    for _ in 0..epochs {
        let (_, grad) = loss_grad(spec, &w, data, idx)?;
        for (wi, gi) in w.iter_mut().zip(&grad) {
            *wi -= step_size * gi;
        }
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("local training diverged (NaN/Inf)".into()));
    }
    Ok((w, true))
}

/// Data-size-weighted parameter average over the winner set.
pub fn aggregate(updates: &[(String, Vec<f64>, usize)]) -> Result<Vec<f64>> {
    let Some(first) = updates.first() else {
        return Err(Error::Config("aggregate needs at least one update".into()));
    };
    let dim = first.1.len();
    let mut total = 0usize;
    let mut out = vec![0.0; dim];
    for (id, params, d) in updates {
        if params.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: params.len(),
            });
        }
        if *d == 0 {
            return Err(Error::Config(format!("update from {id} has zero weight")));
        }
        total += d;
        for (o, p) in out.iter_mut().zip(params) {
            *o += *d as f64 * p;
        }
    }
    for o in out.iter_mut() {
        *o /= total as f64;
        if !o.is_finite() {
            return Err(Error::Numerical("aggregate produced NaN/Inf".into()));
        }
    }
    Ok(out)
}

/// Held-out loss and accuracy.
pub fn evaluate(
    spec: &LearnerSpec,
    params: &[f64],
    data: &Dataset,
    idx: &[usize],
) -> Result<(f64, f64)> {
    if idx.is_empty() {
        return Err(Error::Config("evaluate on an empty index set".into()));
    }
    let n_classes = spec.n_classes();
    let mut loss = 0.0;
    let mut correct = 0usize;
    let inv = 1.0 / idx.len() as f64;
    let mut probs = vec![0.0; n_classes];
    for &i in idx {
        predict_into(spec, params, data.row(i), &mut probs);
        let y = data.labels[i];
        loss -= probs[y].max(1e-300).ln() * inv;
        let argmax = probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        if argmax == y {
            correct += 1;
        }
    }
    Ok((loss, correct as f64 / idx.len() as f64))
}

fn predict_into(spec: &LearnerSpec, params: &[f64], x: &[f64], probs: &mut [f64]) {
    match *spec {
        LearnerSpec::Softmax {
            n_features,
            n_classes,
        } => {
            for c in 0..n_classes {
                let w = &params[c * (n_features + 1)..(c + 1) * (n_features + 1)];
                let mut z = w[n_features];
                for d in 0..n_features {
                    z += w[d] * x[d];
                }
                probs[c] = z;
            }
            softmax_logits_into(probs);
        }
        LearnerSpec::Mlp {
            n_features,
            hidden,
            n_classes,
        } => {
            let (w1, w2) = params.split_at(hidden * (n_features + 1));
            let mut h = vec![0.0; hidden];
            for j in 0..hidden {
                let w = &w1[j * (n_features + 1)..(j + 1) * (n_features + 1)];
                let mut z = w[n_features];
                for d in 0..n_features {
                    z += w[d] * x[d];
                }
                h[j] = z.tanh();
            }
            for c in 0..n_classes {
                let w = &w2[c * (hidden + 1)..(c + 1) * (hidden + 1)];
                let mut z = w[hidden];
                for j in 0..hidden {
                    z += w[j] * h[j];
                }
                probs[c] = z;
            }
            softmax_logits_into(probs);
        }
    }
}
