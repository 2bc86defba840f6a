//! Single-hidden-layer ReLU network with dropout, trained with mini-batch Adam
//! on binary cross-entropy.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::surrogate::{dot, sigmoid};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpParams {
    pub hidden: usize,
    pub dropout: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for MlpParams {
    fn default() -> Self {
        Self {
            hidden: 128,
            dropout: 0.2,
            epochs: 12,
            batch_size: 128,
            learning_rate: 1e-3,
        }
    }
}

/// Parameters stored flat: `w1` (hidden x d, row-major), `b1`, `w2`, `b2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    d: usize,
    hidden: usize,
    params: Vec<f64>,
}

impl Mlp {
    fn offsets(d: usize, h: usize) -> (usize, usize, usize, usize) {
        let w1 = 0;
        let b1 = h * d;
        let w2 = b1 + h;
        let b2 = w2 + h;
        (w1, b1, w2, b2)
    }

    /// `x` rows must already be in model input space.
    pub fn fit(x: &[Vec<f64>], y: &[f64], params: MlpParams, seed: u64) -> Self {
        let d = x.first().map_or(0, Vec::len);
        let h = params.hidden;
        let (_, ob1, ow2, ob2) = Self::offsets(d, h);
        let n_params = ob2 + 1;
        let mut rng = seed::rng_for(seed, &["mlp"]);

        // Glorot-uniform weights, zero biases.
        let mut p = vec![0.0; n_params];
        let lim1 = (6.0 / (d + h) as f64).sqrt();
        for v in &mut p[..ob1] {
            *v = rng.random_range(-lim1..lim1);
        }
        let lim2 = (6.0 / (h + 1) as f64).sqrt();
        for v in &mut p[ow2..ob2] {
            *v = rng.random_range(-lim2..lim2);
        }

        let mut opt = Adam::new(n_params, params.learning_rate, 1e-7);
        let keep = 1.0 - params.dropout;
        let mut order: Vec<usize> = (0..x.len()).collect();
        let mut grad = vec![0.0; n_params];
        let mut act = vec![0.0; h];
        let mut mask = vec![0.0; h];
        for _ in 0..params.epochs {
            order.shuffle(&mut rng);
            for batch in order.chunks(params.batch_size.max(1)) {
                grad.iter_mut().for_each(|g| *g = 0.0);
                for &i in batch {
                    let xi = &x[i];
                    for u in 0..h {
                        let row = &p[u * d..(u + 1) * d];
                        let pre = dot(row, xi) + p[ob1 + u];
                        let dropped = rng.random::<f64>() < params.dropout;
                        mask[u] = if pre > 0.0 && !dropped {
                            1.0 / keep
                        } else {
                            0.0
                        };
                        act[u] = pre.max(0.0) * mask[u];
                    }
                    let z = dot(&act, &p[ow2..ob2]) + p[ob2];
                    let r = sigmoid(z) - y[i];
                    for u in 0..h {
                        grad[ow2 + u] += r * act[u];
                        let back = r * p[ow2 + u] * mask[u];
                        if back != 0.0 {
                            grad[ob1 + u] += back;
                            for (g, v) in grad[u * d..(u + 1) * d].iter_mut().zip(xi) {
                                *g += back * v;
                            }
                        }
                    }
                    grad[ob2] += r;
                }
                let scale = 1.0 / batch.len() as f64;
                grad.iter_mut().for_each(|g| *g *= scale);
                opt.step(&mut p, &grad);
            }
        }
        Self {
            d,
            hidden: h,
            params: p,
        }
    }

    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        let (d, h) = (self.d, self.hidden);
        let (_, ob1, ow2, ob2) = Self::offsets(d, h);
        let p = &self.params;
        let mut z = p[ob2];
        for u in 0..h {
            let pre = dot(&p[u * d..(u + 1) * d], x) + p[ob1 + u];
            z += pre.max(0.0) * p[ow2 + u];
        }
        sigmoid(z)
    }
}
