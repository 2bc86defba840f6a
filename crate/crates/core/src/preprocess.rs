//! Selective standardization: dynamic coordinates are z-scored with
//! statistics from the training split only; static coordinates pass through.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Block, FeatureSchema, Sample};

#[derive(Debug, Error, PartialEq)]
pub enum PreprocessError {
    #[error("cannot fit a standardizer on an empty training split")]
    EmptyTrain,
}

/// Per-coordinate mean and population standard deviation of the dynamic block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    dynamic_idx: Vec<usize>,
    means: Vec<f64>,
    stds: Vec<f64>,
    fit_key: String,
}

impl Standardizer {
    /// Fit on `train`. `fit_key` names the split and is kept for provenance checks.
    pub fn fit(
        train: &[Sample],
        schema: &FeatureSchema,
        fit_key: impl Into<String>,
    ) -> Result<Self, PreprocessError> {
        if train.is_empty() {
            return Err(PreprocessError::EmptyTrain);
        }
        let dynamic_idx = schema.indices_of(Block::Dynamic);
        // Accumulate in id order so the statistics ignore input order.
        let mut train: Vec<&Sample> = train.iter().collect();
        train.sort_by(|a, b| a.id.cmp(&b.id));
        let n = train.len() as f64;
        let mut means = Vec::with_capacity(dynamic_idx.len());
        let mut stds = Vec::with_capacity(dynamic_idx.len());
        for &j in &dynamic_idx {
            let mean = train.iter().map(|s| s.features[j]).sum::<f64>() / n;
            let var = train
                .iter()
                .map(|s| (s.features[j] - mean).powi(2))
                .sum::<f64>()
                / n;
            let sd = var.sqrt();
            means.push(mean);
            stds.push(if sd > 0.0 { sd } else { 1.0 });
        }
        Ok(Self {
            dynamic_idx,
            means,
            stds,
            fit_key: fit_key.into(),
        })
    }

    /// Standardizer that leaves every coordinate untouched.
    pub fn identity(fit_key: impl Into<String>) -> Self {
        Self {
            dynamic_idx: Vec::new(),
            means: Vec::new(),
            stds: Vec::new(),
            fit_key: fit_key.into(),
        }
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn stds(&self) -> &[f64] {
        &self.stds
    }

    pub fn fit_key(&self) -> &str {
        &self.fit_key
    }

    pub fn dynamic_indices(&self) -> &[usize] {
        &self.dynamic_idx
    }

    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        let mut z = x.to_vec();
        for (k, &j) in self.dynamic_idx.iter().enumerate() {
            z[j] = (x[j] - self.means[k]) / self.stds[k];
        }
        z
    }

    pub fn invert(&self, z: &[f64]) -> Vec<f64> {
        let mut x = z.to_vec();
        for (k, &j) in self.dynamic_idx.iter().enumerate() {
            x[j] = z[j] * self.stds[k] + self.means[k];
        }
        x
    }

    /// Inverse of a single coordinate.
    pub fn invert_coord(&self, j: usize, z: f64) -> f64 {
        match self.dynamic_idx.binary_search(&j) {
            Ok(k) => z * self.stds[k] + self.means[k],
            Err(_) => z,
        }
    }

    /// Scale of coordinate `j` in standardized units (1 for static).
    pub fn scale_of(&self, j: usize) -> f64 {
        match self.dynamic_idx.binary_search(&j) {
            Ok(k) => self.stds[k],
            Err(_) => 1.0,
        }
    }
}
