//! Linear logistic surrogate. Attacks read its analytic input gradient.

use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::{check_both_classes, ModelError};
use crate::data::Sample;
use crate::preprocess::Standardizer;

pub const SURROGATE_EPOCHS: usize = 20;
pub const SURROGATE_LR: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateModel {
    weights: Vec<f64>,
    bias: f64,
    trained_on: String,
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy of logit `z` against label `y`, computed without
/// forming `ln(sigmoid(z))`.
pub(crate) fn bce_from_logit(z: f64, y: f64) -> f64 {
    let softplus = z.max(0.0) + (-z.abs()).exp().ln_1p();
    softplus - y * z
}

impl SurrogateModel {
    pub fn from_parts(weights: Vec<f64>, bias: f64, trained_on: impl Into<String>) -> Self {
        Self {
            weights,
            bias,
            trained_on: trained_on.into(),
        }
    }

    /// Full-batch Adam on mean BCE, zero initialization, fixed epoch count.
    ///
    /// `train` holds raw feature vectors; they are standardized with `std`
    /// before fitting. Samples are visited in id order so the result does
    /// not depend on input order.
    pub fn train(
        train: &[Sample],
        std: &Standardizer,
        trained_on: impl Into<String>,
    ) -> Result<Self, ModelError> {
        check_both_classes(train)?;
        let mut ordered: Vec<&Sample> = train.iter().collect();
        ordered.sort_by(|a, b| a.id.cmp(&b.id));
        let xs: Vec<Vec<f64>> = ordered.iter().map(|s| std.transform(&s.features)).collect();
        let ys: Vec<f64> = ordered.iter().map(|s| s.label.as_f64()).collect();
        let d = xs[0].len();
        let n = xs.len() as f64;

        // Layout: weights followed by bias.
        let mut params = vec![0.0; d + 1];
        let mut opt = Adam::new(d + 1, SURROGATE_LR, 1e-8);
        let mut grad = vec![0.0; d + 1];
        for _ in 0..SURROGATE_EPOCHS {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for (x, &y) in xs.iter().zip(&ys) {
                let z = dot(&params[..d], x) + params[d];
                let r = sigmoid(z) - y;
                for (g, xi) in grad[..d].iter_mut().zip(x) {
                    *g += r * xi;
                }
                grad[d] += r;
            }
            grad.iter_mut().for_each(|g| *g /= n);
            opt.step(&mut params, &grad);
        }
        let bias = params.pop().expect("bias present");
        Ok(Self {
            weights: params,
            bias,
            trained_on: trained_on.into(),
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn trained_on(&self) -> &str {
        &self.trained_on
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn logit(&self, z: &[f64]) -> f64 {
        dot(&self.weights, z) + self.bias
    }

    pub fn prob(&self, z: &[f64]) -> f64 {
        sigmoid(self.logit(z))
    }

    /// BCE at standardized-space input `z`.
    pub fn loss(&self, z: &[f64], y: f64) -> f64 {
        bce_from_logit(self.logit(z), y)
    }

    /// Loss and its gradient with respect to the input: `(sigmoid - y) * w`.
    pub fn loss_grad(&self, z: &[f64], y: f64) -> (f64, Vec<f64>) {
        let logit = self.logit(z);
        let r = sigmoid(logit) - y;
        (
            bce_from_logit(logit, y),
            self.weights.iter().map(|w| r * w).collect(),
        )
    }
}

/// Four independent accumulators so the loop vectorizes; the summation
/// order is fixed, so results stay bit-reproducible.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for i in 0..4 {
            acc[i] += x[i] * y[i];
        }
    }
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Squared Euclidean distance accumulated like [`dot`], or `None` as soon
/// as the partial sum exceeds `bound`. The terms are non-negative, so a
/// partial sum above `bound` implies the full distance is too.
pub(crate) fn sq_dist_within(a: &[f64], b: &[f64], bound: f64) -> Option<f64> {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (j, (x, y)) in (&mut ca).zip(&mut cb).enumerate() {
        for i in 0..4 {
            let d = x[i] - y[i];
            acc[i] += d * d;
        }
        if j % 8 == 7 && (acc[0] + acc[1]) + (acc[2] + acc[3]) > bound {
            return None;
        }
    }
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    let total = (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail;
    (total <= bound).then_some(total)
}
