//! Bagged forest and logistic gradient boosting over [`RegressionTree`].

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::surrogate::sigmoid;
use super::tree::{BinnedDesign, RegressionTree, TreeParams};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: Option<usize>,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    trees: Vec<RegressionTree>,
}

impl RandomForest {
    /// Each tree sees a bootstrap draw and examines `floor(sqrt(d))`
    /// features per split.
    pub fn fit(x: &[Vec<f64>], y: &[f64], params: ForestParams, seed: u64) -> Self {
        let n = x.len();
        let d = x.first().map_or(0, Vec::len);
        let max_features = ((d as f64).sqrt() as usize).max(1);
        let tree_params = TreeParams {
            max_depth: params.max_depth,
            max_features: Some(max_features),
            min_samples_split: 2,
        };
        let binned = BinnedDesign::new(x);
        let trees = (0..params.n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = seed::rng_for(seed, &["forest-tree", &t.to_string()]);
                let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                RegressionTree::fit_binned(x, y, &rows, tree_params, &mut rng, &binned).0
            })
            .collect();
        Self { trees }
    }

    /// Mean of per-tree malware fractions.
    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoostingParams {
    pub n_stages: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
}

impl Default for BoostingParams {
    fn default() -> Self {
        Self {
            n_stages: 100,
            max_depth: 3,
            learning_rate: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientBoosting {
    init: f64,
    learning_rate: f64,
    stages: Vec<RegressionTree>,
}

impl GradientBoosting {
    /// Binomial deviance boosting: each stage fits the residual `y - p` and
    /// replaces leaf values with the one-step Newton estimate
    /// `sum(r) / sum(p (1 - p))`.
    pub fn fit(x: &[Vec<f64>], y: &[f64], params: BoostingParams, seed: u64) -> Self {
        let n = x.len();
        let pos = y.iter().sum::<f64>() / n as f64;
        let init = (pos / (1.0 - pos)).ln();
        let mut f = vec![init; n];
        let rows: Vec<usize> = (0..n).collect();
        let tree_params = TreeParams {
            max_depth: Some(params.max_depth),
            max_features: None,
            min_samples_split: 2,
        };
        let mut stages = Vec::with_capacity(params.n_stages);
        let mut rng = seed::rng_for(seed, &["boosting"]);
        let binned = BinnedDesign::new(x);
        for _ in 0..params.n_stages {
            let p: Vec<f64> = f.iter().map(|&v| sigmoid(v)).collect();
            let residual: Vec<f64> = y.iter().zip(&p).map(|(yi, pi)| yi - pi).collect();
            let (mut tree, leaf_of) =
                RegressionTree::fit_binned(x, &residual, &rows, tree_params, &mut rng, &binned);
            let mut num = vec![0.0; tree.node_count()];
            let mut den = vec![0.0; tree.node_count()];
            for (k, &leaf) in leaf_of.iter().enumerate() {
                num[leaf] += residual[k];
                den[leaf] += p[k] * (1.0 - p[k]);
            }
            let value: Vec<f64> = num
                .iter()
                .zip(&den)
                .map(|(n, d)| if d.abs() < 1e-150 { 0.0 } else { n / d })
                .collect();
            let mut leaves = leaf_of.clone();
            leaves.sort_unstable();
            leaves.dedup();
            for leaf in leaves {
                tree.set_leaf_value(leaf, value[leaf]);
            }
            for (fk, &leaf) in f.iter_mut().zip(&leaf_of) {
                *fk += params.learning_rate * value[leaf];
            }
            stages.push(tree);
        }
        Self {
            init,
            learning_rate: params.learning_rate,
            stages,
        }
    }

    pub fn decision(&self, x: &[f64]) -> f64 {
        self.init + self.learning_rate * self.stages.iter().map(|t| t.predict(x)).sum::<f64>()
    }

    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        sigmoid(self.decision(x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn separable() -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..60 {
            let label = (i % 2) as f64;
            let base = if label == 1.0 { 3.0 } else { -3.0 };
            x.push(vec![base + (i % 5) as f64 * 0.3, (i % 7) as f64]);
            y.push(label);
        }
        (x, y)
    }

    #[test]
    fn forest_fits_separable() {
        let (x, y) = separable();
        let rf = RandomForest::fit(&x, &y, ForestParams::default(), 42);
        let acc = x
            .iter()
            .zip(&y)
            .filter(|(xi, yi)| (rf.predict_proba(xi) > 0.5) == (**yi == 1.0))
            .count() as f64
            / x.len() as f64;
        assert!(acc >= 0.99);
        assert_eq!(rf.n_trees(), 100);
    }

    #[test]
    fn forest_deterministic() {
        let (x, y) = separable();
        let a = RandomForest::fit(
            &x,
            &y,
            ForestParams {
                n_trees: 10,
                max_depth: None,
            },
            7,
        );
        let b = RandomForest::fit(
            &x,
            &y,
            ForestParams {
                n_trees: 10,
                max_depth: None,
            },
            7,
        );
        assert_eq!(a, b);
    }

    #[test]
    fn boosting_fits_separable() {
        let (x, y) = separable();
        let gb = GradientBoosting::fit(&x, &y, BoostingParams::default(), 42);
        for (xi, yi) in x.iter().zip(&y) {
            assert_eq!(gb.predict_proba(xi) > 0.5, *yi == 1.0);
        }
    }

    #[test]
    fn boosting_init_is_log_odds() {
        let x = vec![vec![0.0]; 4];
        let y = vec![1.0, 0.0, 0.0, 0.0];
        let gb = GradientBoosting::fit(
            &x,
            &y,
            BoostingParams {
                n_stages: 0,
                ..Default::default()
            },
            1,
        );
        assert!((gb.decision(&[0.0]) - (1.0f64 / 3.0).ln()).abs() < 1e-12);
    }
}
