//! JSON run configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attacks::{AttackConfig, AttackKind};
use crate::data::{load_csv, synthesize, FeatureSpace, Source, SynthConfig};
use crate::models::{Hyperparameters, ModelFamily};
use crate::protocols::{DatasetEntry, ExecConfig, ProtocolKind, ProtocolSpec};
use crate::seed;

/// Environment variable that overrides the configured output directory.
pub const OUT_ENV: &str = "DRIFTBENCH_OUT";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parsing {path}: {source}")]
    Parse {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Where a dataset comes from: exactly one of `synth` or `csv` + `schema`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<PathBuf>,
}

/// How samples of different acquisition sources are grouped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    #[default]
    Pooled,
    /// One dataset per source, named `<name>/<source>`.
    BySource,
}

fn d_spaces() -> Vec<FeatureSpace> {
    vec![FeatureSpace::Static, FeatureSpace::Dynamic]
}
fn d_models() -> Vec<ModelFamily> {
    ModelFamily::ALL.to_vec()
}
fn d_attacks() -> Vec<AttackConfig> {
    vec![
        AttackConfig::new(AttackKind::Fgsm),
        AttackConfig::new(AttackKind::Spsa),
    ]
}
fn d_budget() -> f64 {
    0.05
}
fn d_min_class() -> usize {
    10
}
fn d_seed() -> u64 {
    seed::DEFAULT_SEED
}
fn d_window() -> usize {
    3
}
fn d_frac() -> f64 {
    0.7
}
fn d_bootstrap() -> usize {
    1000
}
fn d_out() -> PathBuf {
    PathBuf::from("driftbench-out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub datasets: Vec<DatasetSpec>,
    #[serde(default)]
    pub partition: Partition,
    #[serde(default = "d_spaces")]
    pub feature_spaces: Vec<FeatureSpace>,
    pub protocols: Vec<ProtocolKind>,
    #[serde(default = "d_models")]
    pub models: Vec<ModelFamily>,
    /// Empty means clean evaluation only.
    #[serde(default = "d_attacks")]
    pub attacks: Vec<AttackConfig>,
    #[serde(default = "d_budget")]
    pub budget_fraction: f64,
    #[serde(default = "d_min_class")]
    pub min_class_count: usize,
    #[serde(default = "d_seed")]
    pub seed: u64,
    #[serde(default = "d_window")]
    pub recent_window: usize,
    #[serde(default = "d_frac")]
    pub train_frac: f64,
    #[serde(default = "d_bootstrap")]
    pub bootstrap_samples: usize,
    #[serde(default)]
    pub hyperparameters: Hyperparameters,
    #[serde(default = "d_out")]
    pub output_dir: PathBuf,
}

impl RunConfig {
    /// Minimal config over `datasets` with every other field at its default.
    pub fn new(datasets: Vec<DatasetSpec>, protocols: Vec<ProtocolKind>) -> Self {
        Self {
            datasets,
            partition: Partition::Pooled,
            feature_spaces: d_spaces(),
            protocols,
            models: d_models(),
            attacks: d_attacks(),
            budget_fraction: d_budget(),
            min_class_count: d_min_class(),
            seed: d_seed(),
            recent_window: d_window(),
            train_frac: d_frac(),
            bootstrap_samples: d_bootstrap(),
            hyperparameters: Hyperparameters::default(),
            output_dir: d_out(),
        }
    }

    pub fn from_json_str(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }

    /// Parse and validate; relative dataset and output paths resolve against
    /// the config file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_json_str(&text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        for d in &mut cfg.datasets {
            for p in [&mut d.csv, &mut d.schema].into_iter().flatten() {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.datasets.is_empty() {
            return bad("at least one dataset required".into());
        }
        if self.protocols.is_empty() || self.models.is_empty() || self.feature_spaces.is_empty() {
            return bad("at least one protocol, model and feature space required".into());
        }
        let mut names: Vec<&str> = self.datasets.iter().map(|d| d.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return bad("dataset names must be unique".into());
        }
        for d in &self.datasets {
            match (&d.synth, &d.csv, &d.schema) {
                (Some(s), None, None) => s
                    .validate()
                    .map_err(|e| ConfigError::Invalid(e.to_string()))?,
                (None, Some(_), Some(_)) => {}
                _ => {
                    return bad(format!(
                        "dataset `{}` needs either `synth` or `csv` + `schema`",
                        d.name
                    ))
                }
            }
        }
        let mut kinds: Vec<AttackKind> = self.attacks.iter().map(|a| a.kind).collect();
        kinds.sort_by_key(|k| k.as_str());
        if kinds.windows(2).any(|w| w[0] == w[1]) {
            return bad("each attack kind may appear once".into());
        }
        for a in &self.attacks {
            a.validate().map_err(ConfigError::Invalid)?;
        }
        if !(self.budget_fraction > 0.0 && self.budget_fraction <= 1.0) {
            return bad("budget_fraction must lie in (0, 1]".into());
        }
        if !(self.train_frac > 0.0 && self.train_frac < 1.0) {
            return bad("train_frac must lie in (0, 1)".into());
        }
        if self.recent_window == 0 {
            return bad("recent_window must be at least 1".into());
        }
        Ok(())
    }

    pub fn protocol_spec(&self, kind: ProtocolKind) -> ProtocolSpec {
        ProtocolSpec {
            kind,
            window_len: self.recent_window,
            train_frac: self.train_frac,
        }
    }

    pub fn exec_config(&self) -> ExecConfig {
        let attacks = self
            .attacks
            .iter()
            .map(|a| AttackConfig {
                seed: self.seed,
                ..a.clone()
            })
            .collect();
        ExecConfig {
            seed: self.seed,
            min_class_count: self.min_class_count,
            budget_fraction: self.budget_fraction,
            attacks,
            hyperparameters: self.hyperparameters.clone(),
        }
    }

    /// Output directory: `--out`, then the environment override, then the
    /// config value.
    pub fn resolve_out(&self, flag: Option<&Path>) -> PathBuf {
        if let Some(p) = flag {
            return p.to_path_buf();
        }
        match std::env::var_os(OUT_ENV) {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => self.output_dir.clone(),
        }
    }

    /// Load or synthesize every dataset, split by source when requested.
    pub fn load_datasets(&self) -> Result<Vec<DatasetEntry>, crate::data::DataError> {
        let mut out = Vec::new();
        for d in &self.datasets {
            let ds = match (&d.synth, &d.csv, &d.schema) {
                (Some(s), _, _) => synthesize(s)?,
                (None, Some(csv), Some(schema)) => load_csv(csv, schema)?,
                _ => unreachable!("validated"),
            };
            match self.partition {
                Partition::Pooled => out.push(DatasetEntry::new(d.name.clone(), ds)),
                Partition::BySource => {
                    for src in [Source::Emulator, Source::RealDevice] {
                        if let Some(sub) = ds.filter_source(src) {
                            out.push(DatasetEntry::new(
                                format!("{}/{}", d.name, src.as_str()),
                                sub,
                            ));
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}
