//! Temporal deployment protocols and run execution.
//!
//! A protocol expands a list of years into (training window, test year)
//! pairs. Every training window also yields a baseline key whose test year
//! is the window's end year; the baseline is scored on a stratified holdout
//! of the window's own assembled training pool.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attacks::{
    attack_batch, AdversarialBatch, AttackConfig, AttackKind, DiagSummary, EditBudget,
};
use crate::data::{
    class_counts, partition_by_year, stratified_split, stratified_subsample, FeatureSchema,
    FeatureSpace, Label, Sample, TemporalDataset, YearSlice,
};
use crate::metrics::{linkage, LinkageRecord, MetricsRecord};
use crate::models::{train_target_with, Hyperparameters, ModelFamily, SurrogateModel};
use crate::preprocess::Standardizer;
use crate::seed;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("protocol {0} needs at least two years, found {1}")]
    TooFewYears(ProtocolKind, usize),
    #[error("window length must be at least 1")]
    BadWindow,
    #[error("unknown dataset `{0}`")]
    UnknownDataset(String),
    #[error("year {0} not present in dataset")]
    MissingYear(i32),
    #[error(transparent)]
    Model(#[from] crate::models::ModelError),
    #[error(transparent)]
    Metrics(#[from] crate::metrics::MetricsError),
    #[error(transparent)]
    Preprocess(#[from] crate::preprocess::PreprocessError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolKind {
    SameYear,
    CrossYear,
    ExpandingWindow,
    SizeMatchedEw,
    RecentWindow,
}

impl ProtocolKind {
    pub const ALL: [ProtocolKind; 5] = [
        ProtocolKind::SameYear,
        ProtocolKind::CrossYear,
        ProtocolKind::ExpandingWindow,
        ProtocolKind::SizeMatchedEw,
        ProtocolKind::RecentWindow,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ProtocolKind::SameYear => "same_year",
            ProtocolKind::CrossYear => "cross_year",
            ProtocolKind::ExpandingWindow => "expanding_window",
            ProtocolKind::SizeMatchedEw => "size_matched_ew",
            ProtocolKind::RecentWindow => "recent_window",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.as_str() == s)
    }
}

impl fmt::Display for ProtocolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

fn d_window() -> usize {
    3
}
fn d_frac() -> f64 {
    0.7
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolSpec {
    pub kind: ProtocolKind,
    /// Recent-window length in years.
    #[serde(default = "d_window")]
    pub window_len: usize,
    /// Training share of the baseline split.
    #[serde(default = "d_frac")]
    pub train_frac: f64,
}

impl ProtocolSpec {
    pub fn new(kind: ProtocolKind) -> Self {
        Self {
            kind,
            window_len: d_window(),
            train_frac: d_frac(),
        }
    }
}

/// Evaluation condition of a run: clean only, or one attack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunAttack {
    Clean,
    Fgsm,
    Spsa,
}

impl RunAttack {
    pub fn as_str(self) -> &'static str {
        match self {
            RunAttack::Clean => "clean",
            RunAttack::Fgsm => "fgsm",
            RunAttack::Spsa => "spsa",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "clean" => Some(RunAttack::Clean),
            "fgsm" => Some(RunAttack::Fgsm),
            "spsa" => Some(RunAttack::Spsa),
            _ => None,
        }
    }
}

impl From<AttackKind> for RunAttack {
    fn from(k: AttackKind) -> Self {
        match k {
            AttackKind::Fgsm => RunAttack::Fgsm,
            AttackKind::Spsa => RunAttack::Spsa,
        }
    }
}

/// One cell of the run matrix.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RunKey {
    pub dataset: String,
    pub protocol: ProtocolKind,
    pub space: FeatureSpace,
    /// Sorted ascending.
    pub train_years: Vec<i32>,
    pub test_year: i32,
    pub model: ModelFamily,
    pub attack: RunAttack,
}

/// Compact year list: `2010-2013` for contiguous runs, else `;`-separated.
pub fn format_years(years: &[i32]) -> String {
    match years {
        [] => String::new(),
        [y] => y.to_string(),
        _ if years.windows(2).all(|w| w[1] == w[0] + 1) => {
            format!("{}-{}", years[0], years[years.len() - 1])
        }
        _ => years
            .iter()
            .map(i32::to_string)
            .collect::<Vec<_>>()
            .join(";"),
    }
}

pub fn parse_years(s: &str) -> Option<Vec<i32>> {
    if let Some((a, b)) = s.split_once('-') {
        let (a, b): (i32, i32) = (a.parse().ok()?, b.parse().ok()?);
        return (a <= b).then(|| (a..=b).collect());
    }
    s.split(';').map(|p| p.parse().ok()).collect()
}

impl RunKey {
    pub fn window_end(&self) -> i32 {
        *self.train_years.last().expect("non-empty training window")
    }

    pub fn is_baseline(&self) -> bool {
        self.test_year == self.window_end()
    }

    /// Temporal gap between test year and window end.
    pub fn gap(&self) -> i32 {
        self.test_year - self.window_end()
    }

    /// Key of the baseline this run is contrasted against.
    pub fn baseline_key(&self) -> RunKey {
        RunKey {
            test_year: self.window_end(),
            ..self.clone()
        }
    }

    /// Identifier of the (dataset, protocol, window, model, space, attack)
    /// cell, shared by a run and its baseline.
    pub fn cell_id(&self) -> String {
        format!(
            "{}|{}|{}|{}|{}|{}",
            self.dataset,
            self.protocol,
            format_years(&self.train_years),
            self.model,
            self.space,
            self.attack.as_str()
        )
    }
}

impl fmt::Display for RunKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}->{}", self.cell_id(), self.test_year)
    }
}

/// (training window, test year) pairs of a protocol, baselines included.
pub fn enumerate_windows(
    p: &ProtocolSpec,
    years: &[i32],
) -> Result<Vec<(Vec<i32>, i32)>, ProtocolError> {
    let mut years = years.to_vec();
    years.sort_unstable();
    years.dedup();
    if p.window_len == 0 {
        return Err(ProtocolError::BadWindow);
    }
    if p.kind != ProtocolKind::SameYear && years.len() < 2 {
        return Err(ProtocolError::TooFewYears(p.kind, years.len()));
    }
    let mut out = Vec::new();
    for (i, &y1) in years.iter().enumerate() {
        let window: Vec<i32> = match p.kind {
            ProtocolKind::SameYear | ProtocolKind::CrossYear => vec![y1],
            ProtocolKind::ExpandingWindow | ProtocolKind::SizeMatchedEw => years[..=i].to_vec(),
            ProtocolKind::RecentWindow => {
                let start = y1 - (p.window_len as i32 - 1);
                years[..=i]
                    .iter()
                    .copied()
                    .filter(|&y| y >= start)
                    .collect()
            }
        };
        out.push((window.clone(), y1));
        if p.kind != ProtocolKind::SameYear {
            for &y2 in &years[i + 1..] {
                out.push((window.clone(), y2));
            }
        }
    }
    Ok(out)
}

/// Full run matrix for one dataset.
pub fn enumerate_runs(
    dataset: &str,
    p: &ProtocolSpec,
    years: &[i32],
    spaces: &[FeatureSpace],
    models: &[ModelFamily],
    attacks: &[RunAttack],
) -> Result<Vec<RunKey>, ProtocolError> {
    let windows = enumerate_windows(p, years)?;
    let mut keys = Vec::new();
    for (train_years, test_year) in windows {
        for &space in spaces {
            for &model in models {
                for &attack in attacks {
                    keys.push(RunKey {
                        dataset: dataset.to_string(),
                        protocol: p.kind,
                        space,
                        train_years: train_years.clone(),
                        test_year,
                        model,
                        attack,
                    });
                }
            }
        }
    }
    keys.sort();
    Ok(keys)
}

/// Execution settings shared by all runs.
#[derive(Debug, Clone)]
pub struct ExecConfig {
    pub seed: u64,
    pub min_class_count: usize,
    pub budget_fraction: f64,
    pub attacks: Vec<AttackConfig>,
    pub hyperparameters: Hyperparameters,
}

impl Default for ExecConfig {
    fn default() -> Self {
        Self {
            seed: seed::DEFAULT_SEED,
            min_class_count: 10,
            budget_fraction: 0.05,
            attacks: vec![
                AttackConfig::new(AttackKind::Fgsm),
                AttackConfig::new(AttackKind::Spsa),
            ],
            hyperparameters: Hyperparameters::default(),
        }
    }
}

impl ExecConfig {
    pub fn run_attacks(&self) -> Vec<RunAttack> {
        if self.attacks.is_empty() {
            vec![RunAttack::Clean]
        } else {
            self.attacks.iter().map(|a| a.kind.into()).collect()
        }
    }
}

/// Identity of a training pool: everything that determines the assembled
/// train/holdout split and the models fitted on it.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TrainCell {
    pub dataset: String,
    pub protocol: ProtocolKind,
    pub space: FeatureSpace,
    pub train_years: Vec<i32>,
}

impl TrainCell {
    pub fn of(key: &RunKey) -> Self {
        Self {
            dataset: key.dataset.clone(),
            protocol: key.protocol,
            space: key.space,
            train_years: key.train_years.clone(),
        }
    }

    fn size_matched(&self) -> bool {
        self.protocol == ProtocolKind::SizeMatchedEw
    }

    /// Seed key parts. Protocol is deliberately omitted so that identical
    /// windows (e.g. a cross-year and a first expanding window) reuse the
    /// same split and models; size matching changes the pool and is kept.
    fn seed_parts(&self) -> [String; 3] {
        [
            self.dataset.clone(),
            format_years(&self.train_years),
            if self.size_matched() {
                "capped".into()
            } else {
                "full".into()
            },
        ]
    }

    pub fn fit_key(&self) -> String {
        format!(
            "{}|{}|{}|{}|train",
            self.dataset,
            self.protocol,
            self.space,
            format_years(&self.train_years)
        )
    }
}

/// One dataset, already restricted to nothing; slicing happens per cell.
pub struct DatasetEntry {
    pub name: String,
    pub dataset: TemporalDataset,
    pub slices: BTreeMap<i32, YearSlice>,
}

impl DatasetEntry {
    pub fn new(name: impl Into<String>, dataset: TemporalDataset) -> Self {
        let slices = partition_by_year(&dataset);
        Self {
            name: name.into(),
            dataset,
            slices,
        }
    }

    fn slice(&self, year: i32) -> Result<&YearSlice, ProtocolError> {
        self.slices
            .get(&year)
            .ok_or(ProtocolError::MissingYear(year))
    }
}

/// Train/holdout split of a training window, restricted to one feature space.
#[derive(Debug, Clone)]
pub struct TrainAssembly {
    pub cell: TrainCell,
    pub schema: FeatureSchema,
    pub feature_idx: Vec<usize>,
    /// Pool size before the 70/30 split.
    pub pool_size: usize,
    pub train: Vec<Sample>,
    pub holdout: Vec<Sample>,
}

/// Why a run produced no metrics.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipReason {
    pub reason: String,
    pub detail: String,
}

impl SkipReason {
    fn min_class(detail: String) -> Self {
        Self {
            reason: "min-class-count".into(),
            detail,
        }
    }
}

fn restrict(samples: &[Sample], idx: &[usize]) -> Vec<Sample> {
    samples.iter().map(|s| s.select(idx)).collect()
}

/// Pool the window's years, apply size matching, split 70/30 per class.
pub fn assemble_train(
    entry: &DatasetEntry,
    cell: &TrainCell,
    train_frac: f64,
    global_seed: u64,
) -> Result<Result<TrainAssembly, SkipReason>, ProtocolError> {
    let (schema, feature_idx) = entry.dataset.schema().restrict(cell.space);
    let mut pool = Vec::new();
    for &y in &cell.train_years {
        pool.extend(restrict(&entry.slice(y)?.samples, &feature_idx));
    }
    let parts = cell.seed_parts();
    let part_refs: Vec<&str> = parts.iter().map(String::as_str).collect();
    if cell.size_matched() {
        let end = *cell.train_years.last().expect("non-empty window");
        let (benign, malware) = entry.slice(end)?.class_counts();
        let seed = seed::derive_seed(global_seed, &[&part_refs[..], &["size-match"]].concat());
        match stratified_subsample(&pool, benign, malware, seed) {
            Ok(p) => pool = p,
            Err(e) => return Ok(Err(SkipReason::min_class(e.to_string()))),
        }
    }
    let pool_size = pool.len();
    let split_seed = seed::derive_seed(global_seed, &[&part_refs[..], &["split"]].concat());
    match stratified_split(&pool, train_frac, split_seed) {
        Ok((train, holdout)) => Ok(Ok(TrainAssembly {
            cell: cell.clone(),
            schema,
            feature_idx,
            pool_size,
            train,
            holdout,
        })),
        Err(e) => Ok(Err(SkipReason::min_class(e.to_string()))),
    }
}

fn gate(samples: &[Sample], min: usize, side: &str) -> Option<SkipReason> {
    let (b, m) = class_counts(samples);
    (b < min || m < min)
        .then(|| SkipReason::min_class(format!("{side}: {b} benign / {m} malware < {min}")))
}

/// Metrics of one executed run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub key: RunKey,
    pub train_size: usize,
    pub metrics: MetricsRecord,
    pub diagnostics: Option<DiagSummary>,
    /// Filled for non-baseline runs whose baseline completed.
    pub linkage: Option<LinkageRecord>,
    pub baseline_asr: Option<f64>,
    /// Fit key of the standardizer used by every model of the run.
    pub standardizer_fit_key: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RunOutcome {
    Done(RunResult),
    Skipped {
        key: RunKey,
        reason: SkipReason,
    },
    /// The run's training cell raised an error.
    Failed {
        key: RunKey,
        error: String,
    },
}

impl RunOutcome {
    pub fn key(&self) -> &RunKey {
        match self {
            RunOutcome::Done(r) => &r.key,
            RunOutcome::Skipped { key, .. } | RunOutcome::Failed { key, .. } => key,
        }
    }
}

fn attack_cfg_for(cfg: &ExecConfig, attack: RunAttack) -> Option<&AttackConfig> {
    cfg.attacks
        .iter()
        .find(|a| RunAttack::from(a.kind) == attack)
}

/// Train everything for one cell and evaluate the requested keys. All keys
/// must share `cell`.
pub fn execute_cell(
    entry: &DatasetEntry,
    cell: &TrainCell,
    keys: &[RunKey],
    train_frac: f64,
    cfg: &ExecConfig,
) -> Result<Vec<RunOutcome>, ProtocolError> {
    debug_assert!(keys.iter().all(|k| TrainCell::of(k) == *cell));
    let skip_all = |reason: SkipReason| {
        keys.iter()
            .map(|k| RunOutcome::Skipped {
                key: k.clone(),
                reason: reason.clone(),
            })
            .collect()
    };
    let asm = match assemble_train(entry, cell, train_frac, cfg.seed)? {
        Ok(a) => a,
        Err(reason) => return Ok(skip_all(reason)),
    };
    // The gate applies to year slices as drawn: the assembled pool before its
    // split, and each full transfer test year.
    let pool: Vec<Sample> = asm.train.iter().chain(&asm.holdout).cloned().collect();
    if let Some(reason) = gate(&pool, cfg.min_class_count, "training pool") {
        return Ok(skip_all(reason));
    }

    let std = Standardizer::fit(&asm.train, &asm.schema, cell.fit_key())?;
    let surrogate = SurrogateModel::train(&asm.train, &std, cell.fit_key())?;
    let budget = EditBudget::from_dims(
        asm.schema.d_static(),
        asm.schema.d_dynamic(),
        cfg.budget_fraction,
    );

    // Every test year needed, the window end meaning the holdout.
    let end = *cell.train_years.last().expect("non-empty window");
    let test_years: BTreeSet<i32> = keys.iter().map(|k| k.test_year).collect();
    let mut test_sets: BTreeMap<i32, Result<Vec<Sample>, SkipReason>> = BTreeMap::new();
    for &y in &test_years {
        let samples = if y == end {
            asm.holdout.clone()
        } else {
            restrict(&entry.slice(y)?.samples, &asm.feature_idx)
        };
        let side = if y == end {
            "baseline holdout".to_string()
        } else {
            format!("test year {y}")
        };
        test_sets.insert(
            y,
            match gate(
                &samples,
                if y == end { 1 } else { cfg.min_class_count },
                &side,
            ) {
                Some(r) => Err(r),
                None => Ok(samples),
            },
        );
    }

    // Attacks depend only on the surrogate, so one batch per (test year,
    // attack) serves every model.
    let mut batches: BTreeMap<(i32, RunAttack), AdversarialBatch> = BTreeMap::new();
    let attacks: BTreeSet<RunAttack> = keys.iter().map(|k| k.attack).collect();
    for (&y, set) in &test_sets {
        let Ok(samples) = set else { continue };
        for &a in &attacks {
            if let Some(acfg) = attack_cfg_for(cfg, a) {
                let mut acfg = acfg.clone();
                acfg.seed = seed::derive_seed(
                    cfg.seed,
                    &[
                        &cell.seed_parts().join("/"),
                        cell.space.as_str(),
                        a.as_str(),
                        &y.to_string(),
                    ],
                );
                batches.insert(
                    (y, a),
                    attack_batch(&surrogate, samples, &acfg, budget, &std, &asm.schema),
                );
            }
        }
    }

    let models: BTreeSet<ModelFamily> = keys.iter().map(|k| k.model).collect();
    let seed_parts = cell.seed_parts();
    let mut results: BTreeMap<RunKey, RunOutcome> = BTreeMap::new();
    for model in models {
        let model_seed = seed::derive_seed(
            cfg.seed,
            &[
                &seed_parts[0],
                &seed_parts[1],
                &seed_parts[2],
                cell.space.as_str(),
                model.as_str(),
            ],
        );
        let clf = train_target_with(model, &asm.train, &std, model_seed, &cfg.hyperparameters)?;
        for (&y, set) in &test_sets {
            let model_keys: Vec<&RunKey> = keys
                .iter()
                .filter(|k| k.model == model && k.test_year == y)
                .collect();
            if model_keys.is_empty() {
                continue;
            }
            let samples = match set {
                Ok(s) => s,
                Err(reason) => {
                    for k in model_keys {
                        results.insert(
                            k.clone(),
                            RunOutcome::Skipped {
                                key: k.clone(),
                                reason: reason.clone(),
                            },
                        );
                    }
                    continue;
                }
            };
            let labels: Vec<Label> = samples.iter().map(|s| s.label).collect();
            let xs: Vec<Vec<f64>> = samples.iter().map(|s| s.features.clone()).collect();
            let clean = clf.predict_many(&xs)?;
            for k in model_keys {
                let (adv, diagnostics) = match batches.get(&(y, k.attack)) {
                    Some(b) => (clf.predict_many(&b.projected)?, Some(b.summary())),
                    None => (clean.clone(), None),
                };
                let metrics = MetricsRecord::from_predictions(&clean, &adv, &labels)?;
                results.insert(
                    k.clone(),
                    RunOutcome::Done(RunResult {
                        key: k.clone(),
                        train_size: asm.train.len(),
                        metrics,
                        diagnostics,
                        linkage: None,
                        baseline_asr: None,
                        standardizer_fit_key: std.fit_key().to_string(),
                    }),
                );
            }
        }
    }
    Ok(results.into_values().collect())
}

/// Fill linkage fields of non-baseline runs from their baselines.
pub fn attach_linkage(outcomes: &mut [RunOutcome]) -> Result<(), ProtocolError> {
    let baselines: BTreeMap<RunKey, MetricsRecord> = outcomes
        .iter()
        .filter_map(|o| match o {
            RunOutcome::Done(r) if r.key.is_baseline() => Some((r.key.clone(), r.metrics)),
            _ => None,
        })
        .collect();
    for o in outcomes.iter_mut() {
        if let RunOutcome::Done(r) = o {
            if r.key.is_baseline() {
                continue;
            }
            let bkey = r.key.baseline_key();
            if let Some(b) = baselines.get(&bkey) {
                r.linkage = Some(linkage(&bkey.cell_id(), b, &r.key.cell_id(), &r.metrics)?);
                r.baseline_asr = Some(b.asr);
            }
        }
    }
    Ok(())
}

/// Execute one run key, including its baseline when the key is a transfer
/// run, and attach linkage.
pub fn execute_run(
    entry: &DatasetEntry,
    key: &RunKey,
    train_frac: f64,
    cfg: &ExecConfig,
) -> Result<RunOutcome, ProtocolError> {
    let cell = TrainCell::of(key);
    let mut keys = vec![key.clone()];
    if !key.is_baseline() {
        keys.push(key.baseline_key());
    }
    let mut out = execute_cell(entry, &cell, &keys, train_frac, cfg)?;
    attach_linkage(&mut out)?;
    Ok(out
        .into_iter()
        .find(|o| o.key() == key)
        .expect("requested key evaluated"))
}

/// Execute a set of keys, grouped by training cell and run in parallel.
/// A cell that errors marks its keys failed without aborting the others.
/// Output is sorted by key.
pub fn execute_matrix(
    entries: &[DatasetEntry],
    keys: &[RunKey],
    train_frac_of: impl Fn(ProtocolKind) -> f64 + Sync,
    cfg: &ExecConfig,
) -> Result<Vec<RunOutcome>, ProtocolError> {
    let mut cells: BTreeMap<TrainCell, Vec<RunKey>> = BTreeMap::new();
    for k in keys {
        cells.entry(TrainCell::of(k)).or_default().push(k.clone());
    }
    let cells: Vec<(TrainCell, Vec<RunKey>)> = cells.into_iter().collect();
    let chunks: Vec<Vec<RunOutcome>> = cells
        .par_iter()
        .map(|(cell, ks)| {
            let result = entries
                .iter()
                .find(|e| e.name == cell.dataset)
                .ok_or_else(|| ProtocolError::UnknownDataset(cell.dataset.clone()))
                .and_then(|entry| execute_cell(entry, cell, ks, train_frac_of(cell.protocol), cfg));
            result.unwrap_or_else(|e| {
                ks.iter()
                    .map(|k| RunOutcome::Failed {
                        key: k.clone(),
                        error: e.to_string(),
                    })
                    .collect()
            })
        })
        .collect();
    let mut out: Vec<RunOutcome> = chunks.into_iter().flatten().collect();
    out.sort_by(|a, b| a.key().cmp(b.key()));
    attach_linkage(&mut out)?;
    Ok(out)
}
