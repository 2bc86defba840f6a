//! Logistic surrogate and the target classifier zoo.

mod adam;
pub mod ensemble;
pub mod knn;
pub mod mlp;
pub mod surrogate;
pub mod tree;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{FeatureSpace, Label, Sample};
use crate::preprocess::Standardizer;
use ensemble::{BoostingParams, ForestParams, GradientBoosting, RandomForest};
use knn::Knn;
use mlp::{Mlp, MlpParams};

pub use adam::Adam;
pub use surrogate::SurrogateModel;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("training data must contain both classes")]
    SingleClass,
    #[error("input has {found} features, model expects {expected}")]
    Dimension { expected: usize, found: usize },
    #[error("model serialization: {0}")]
    Serialization(String),
}

pub(crate) fn check_both_classes(train: &[Sample]) -> Result<(), ModelError> {
    let malware = train.iter().filter(|s| s.label == Label::Malware).count();
    if malware == 0 || malware == train.len() {
        return Err(ModelError::SingleClass);
    }
    Ok(())
}

/// Target classifier families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelFamily {
    Rf,
    Gb,
    Knn,
    Mlp,
}

impl ModelFamily {
    pub const ALL: [ModelFamily; 4] = [
        ModelFamily::Rf,
        ModelFamily::Gb,
        ModelFamily::Knn,
        ModelFamily::Mlp,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelFamily::Rf => "rf",
            ModelFamily::Gb => "gb",
            ModelFamily::Knn => "knn",
            ModelFamily::Mlp => "mlp",
        }
    }
}

impl fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelFamily {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ModelFamily::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown model family `{s}`"))
    }
}

/// Which samples a model is trained on.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TrainSpec {
    pub years: BTreeSet<i32>,
    /// Size of the assembled pool when size matching is active.
    pub sample_cap: Option<usize>,
    pub feature_space: FeatureSpace,
    pub seed: u64,
}

/// Fixed hyperparameters of every family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparameters {
    pub forest: ForestParams,
    pub boosting: BoostingParams,
    pub knn_k: usize,
    pub mlp: MlpParams,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self {
            forest: ForestParams::default(),
            boosting: BoostingParams::default(),
            knn_k: 5,
            mlp: MlpParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Fitted {
    Forest(RandomForest),
    Boosting(GradientBoosting),
    Knn(Knn),
    Mlp(Mlp),
}

/// A fitted target model. Inputs to [`TargetClassifier::predict`] are raw
/// feature vectors; the classifier applies its own standardizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetClassifier {
    family: ModelFamily,
    dim: usize,
    standardizer: Standardizer,
    hyperparameters: Hyperparameters,
    fitted: Fitted,
}

/// Fit `family` on `train` with default hyperparameters.
pub fn train_target(
    family: ModelFamily,
    train: &[Sample],
    std: &Standardizer,
    seed: u64,
) -> Result<TargetClassifier, ModelError> {
    train_target_with(family, train, std, seed, &Hyperparameters::default())
}

pub fn train_target_with(
    family: ModelFamily,
    train: &[Sample],
    std: &Standardizer,
    seed: u64,
    hp: &Hyperparameters,
) -> Result<TargetClassifier, ModelError> {
    check_both_classes(train)?;
    let mut ordered: Vec<&Sample> = train.iter().collect();
    ordered.sort_by(|a, b| a.id.cmp(&b.id));
    let x: Vec<Vec<f64>> = ordered.iter().map(|s| std.transform(&s.features)).collect();
    let y: Vec<f64> = ordered.iter().map(|s| s.label.as_f64()).collect();
    let dim = x[0].len();
    let seed = crate::seed::derive_seed(seed, &["target", family.as_str()]);
    let fitted = match family {
        ModelFamily::Rf => Fitted::Forest(RandomForest::fit(&x, &y, hp.forest, seed)),
        ModelFamily::Gb => Fitted::Boosting(GradientBoosting::fit(&x, &y, hp.boosting, seed)),
        ModelFamily::Knn => {
            let labels = ordered.iter().map(|s| s.label).collect();
            Fitted::Knn(Knn::fit(x, labels, hp.knn_k))
        }
        ModelFamily::Mlp => Fitted::Mlp(Mlp::fit(&x, &y, hp.mlp, seed)),
    };
    Ok(TargetClassifier {
        family,
        dim,
        standardizer: std.clone(),
        hyperparameters: hp.clone(),
        fitted,
    })
}

impl TargetClassifier {
    pub fn family(&self) -> ModelFamily {
        self.family
    }

    pub fn hyperparameters(&self) -> &Hyperparameters {
        &self.hyperparameters
    }

    pub fn standardizer(&self) -> &Standardizer {
        &self.standardizer
    }

    pub fn predict(&self, x: &[f64]) -> Result<Label, ModelError> {
        if x.len() != self.dim {
            return Err(ModelError::Dimension {
                expected: self.dim,
                found: x.len(),
            });
        }
        let z = self.standardizer.transform(x);
        let label = match &self.fitted {
            Fitted::Forest(m) => proba_label(m.predict_proba(&z)),
            Fitted::Boosting(m) => proba_label(m.predict_proba(&z)),
            Fitted::Knn(m) => m.predict(&z),
            Fitted::Mlp(m) => proba_label(m.predict_proba(&z)),
        };
        Ok(label)
    }

    pub fn predict_many(&self, xs: &[Vec<f64>]) -> Result<Vec<Label>, ModelError> {
        xs.iter().map(|x| self.predict(x)).collect()
    }

    /// Self-describing JSON blob (family, hyperparameters, standardizer, fitted state).
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, ModelError> {
        serde_json::from_str(s).map_err(|e| ModelError::Serialization(e.to_string()))
    }
}

fn proba_label(p: f64) -> Label {
    if p > 0.5 {
        Label::Malware
    } else {
        Label::Benign
    }
}
