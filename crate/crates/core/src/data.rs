//! Feature schema, labelled year-indexed samples, CSV ingestion, yearly
//! partitioning, stratified splitting and the synthetic drift generator.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Bernoulli, Distribution, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed;

/// Errors raised while loading, validating or splitting data.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("schema json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid schema: {0}")]
    Schema(String),
    #[error("no samples")]
    NoSamples,
    #[error("header mismatch at column {column}: expected `{expected}`, found `{found}`")]
    Header {
        column: usize,
        expected: String,
        found: String,
    },
    #[error("row {row}, column `{column}`: {message}")]
    Malformed {
        row: usize,
        column: String,
        message: String,
    },
    #[error("row {row}, column `{column}`: domain violation, value {value} not allowed for {block} feature")]
    DomainViolation {
        row: usize,
        column: String,
        value: f64,
        block: Block,
    },
    #[error("duplicate sample id `{0}`")]
    DuplicateId(String),
    #[error("stratification error: {0}")]
    Stratification(String),
}

pub type Result<T> = std::result::Result<T, DataError>;

/// The two feature blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Block {
    /// Binary indicators (permissions, intents).
    Static,
    /// Non-negative integer counts (system calls).
    Dynamic,
}

impl fmt::Display for Block {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Block::Static => f.write_str("static"),
            Block::Dynamic => f.write_str("dynamic"),
        }
    }
}

impl Block {
    /// Whether `v` lies in the block's value domain.
    pub fn admits(self, v: f64) -> bool {
        match self {
            Block::Static => v == 0.0 || v == 1.0,
            Block::Dynamic => v.is_finite() && v >= 0.0 && v.fract() == 0.0,
        }
    }
}

/// Feature space a model is trained on. Each space selects one block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureSpace {
    Static,
    Dynamic,
}

impl FeatureSpace {
    pub fn block(self) -> Block {
        match self {
            FeatureSpace::Static => Block::Static,
            FeatureSpace::Dynamic => Block::Dynamic,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureSpace::Static => "static",
            FeatureSpace::Dynamic => "dynamic",
        }
    }
}

impl fmt::Display for FeatureSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SchemaEntry {
    name: String,
    block: Block,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SchemaFile {
    features: Vec<SchemaEntry>,
}

/// Ordered feature names with their block assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSchema {
    names: Vec<String>,
    blocks: Vec<Block>,
}

impl FeatureSchema {
    pub fn new(features: Vec<(String, Block)>) -> Result<Self> {
        let mut seen = HashSet::new();
        for (name, _) in &features {
            if name.is_empty() {
                return Err(DataError::Schema("empty feature name".into()));
            }
            if !seen.insert(name.as_str()) {
                return Err(DataError::Schema(format!("duplicate feature `{name}`")));
            }
        }
        let (names, blocks) = features.into_iter().unzip();
        Ok(Self { names, blocks })
    }

    /// Schema with `d_static` static features followed by `d_dynamic` dynamic ones.
    pub fn synthetic(d_static: usize, d_dynamic: usize) -> Self {
        let features = (0..d_static)
            .map(|i| (format!("s{i:03}"), Block::Static))
            .chain((0..d_dynamic).map(|i| (format!("d{i:03}"), Block::Dynamic)))
            .collect();
        Self::new(features).expect("generated names are unique")
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let file: SchemaFile = serde_json::from_str(s)?;
        Self::new(
            file.features
                .into_iter()
                .map(|e| (e.name, e.block))
                .collect(),
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut s = String::new();
        File::open(path)?.read_to_string(&mut s)?;
        Self::from_json_str(&s)
    }

    pub fn to_json_string(&self) -> String {
        let file = SchemaFile {
            features: self
                .names
                .iter()
                .zip(&self.blocks)
                .map(|(n, b)| SchemaEntry {
                    name: n.clone(),
                    block: *b,
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("schema serializes")
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn block_of(&self, i: usize) -> Block {
        self.blocks[i]
    }

    pub fn d_static(&self) -> usize {
        self.blocks.iter().filter(|b| **b == Block::Static).count()
    }

    pub fn d_dynamic(&self) -> usize {
        self.blocks.iter().filter(|b| **b == Block::Dynamic).count()
    }

    /// Indices of features in `block`, in schema order.
    pub fn indices_of(&self, block: Block) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.blocks[i] == block)
            .collect()
    }

    /// Sub-schema holding only the features of `space`, plus the source indices.
    pub fn restrict(&self, space: FeatureSpace) -> (FeatureSchema, Vec<usize>) {
        let idx = self.indices_of(space.block());
        let sub = FeatureSchema {
            names: idx.iter().map(|&i| self.names[i].clone()).collect(),
            blocks: idx.iter().map(|&i| self.blocks[i]).collect(),
        };
        (sub, idx)
    }

    /// Returns the first offending coordinate, if any.
    pub fn first_violation(&self, features: &[f64]) -> Option<usize> {
        features
            .iter()
            .zip(&self.blocks)
            .position(|(v, b)| !b.admits(*v))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Benign = 0,
    Malware = 1,
}

impl Label {
    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Label::Benign),
            1 => Some(Label::Malware),
            _ => None,
        }
    }

    pub fn as_u8(self) -> u8 {
        self as u8
    }

    pub fn as_f64(self) -> f64 {
        f64::from(self.as_u8())
    }

    pub fn flipped(self) -> Self {
        match self {
            Label::Benign => Label::Malware,
            Label::Malware => Label::Benign,
        }
    }
}

/// Collection environment of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Source {
    #[serde(rename = "emulator")]
    Emulator,
    #[serde(rename = "real")]
    RealDevice,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Emulator => "emulator",
            Source::RealDevice => "real",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "emulator" => Some(Source::Emulator),
            "real" => Some(Source::RealDevice),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub year: i32,
    pub label: Label,
    pub source: Source,
    pub features: Vec<f64>,
}

impl Sample {
    /// Copy of the sample keeping only the coordinates at `idx`.
    pub fn select(&self, idx: &[usize]) -> Sample {
        Sample {
            id: self.id.clone(),
            year: self.year,
            label: self.label,
            source: self.source,
            features: idx.iter().map(|&i| self.features[i]).collect(),
        }
    }
}

/// Validated, year-indexed samples.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalDataset {
    schema: FeatureSchema,
    samples: Vec<Sample>,
    year_range: (i32, i32),
}

impl TemporalDataset {
    pub fn new(schema: FeatureSchema, samples: Vec<Sample>) -> Result<Self> {
        if samples.is_empty() {
            return Err(DataError::NoSamples);
        }
        let mut ids = HashSet::with_capacity(samples.len());
        for (row, s) in samples.iter().enumerate() {
            if s.features.len() != schema.len() {
                return Err(DataError::Malformed {
                    row: row + 1,
                    column: "features".into(),
                    message: format!(
                        "expected {} features, found {}",
                        schema.len(),
                        s.features.len()
                    ),
                });
            }
            if let Some(i) = schema.first_violation(&s.features) {
                return Err(DataError::DomainViolation {
                    row: row + 1,
                    column: schema.names()[i].clone(),
                    value: s.features[i],
                    block: schema.block_of(i),
                });
            }
            if !ids.insert(s.id.as_str()) {
                return Err(DataError::DuplicateId(s.id.clone()));
            }
        }
        let min = samples.iter().map(|s| s.year).min().expect("non-empty");
        let max = samples.iter().map(|s| s.year).max().expect("non-empty");
        Ok(Self {
            schema,
            samples,
            year_range: (min, max),
        })
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn year_range(&self) -> (i32, i32) {
        self.year_range
    }

    /// Sorted distinct years present.
    pub fn years(&self) -> Vec<i32> {
        let mut y: Vec<i32> = self.samples.iter().map(|s| s.year).collect();
        y.sort_unstable();
        y.dedup();
        y
    }

    /// Subset of samples collected from `source`, if any exist.
    pub fn filter_source(&self, source: Source) -> Option<TemporalDataset> {
        let samples: Vec<Sample> = self
            .samples
            .iter()
            .filter(|s| s.source == source)
            .cloned()
            .collect();
        TemporalDataset::new(self.schema.clone(), samples).ok()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["id", "year", "label", "source"];
        header.extend(self.schema.names().iter().map(String::as_str));
        wr.write_record(&header)?;
        for s in &self.samples {
            let mut rec = vec![
                s.id.clone(),
                s.year.to_string(),
                s.label.as_u8().to_string(),
                s.source.as_str().to_string(),
            ];
            // Every feature is integral, so this prints without a fraction.
            rec.extend(s.features.iter().map(|v| format!("{v}")));
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }
}

const META_COLUMNS: [&str; 4] = ["id", "year", "label", "source"];

/// Load a dataset from a CSV file and its JSON schema.
pub fn load_csv(path: &Path, schema_path: &Path) -> Result<TemporalDataset> {
    let schema = FeatureSchema::load(schema_path)?;
    load_csv_with_schema(File::open(path)?, schema)
}

pub fn load_csv_with_schema<R: Read>(reader: R, schema: FeatureSchema) -> Result<TemporalDataset> {
    let mut rd = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let header = rd.headers()?.clone();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(DataError::NoSamples);
    }
    let expected: Vec<&str> = META_COLUMNS
        .iter()
        .copied()
        .chain(schema.names().iter().map(String::as_str))
        .collect();
    for (column, exp) in expected.iter().enumerate() {
        let found = header.get(column).unwrap_or("");
        if found.trim() != *exp {
            return Err(DataError::Header {
                column,
                expected: (*exp).to_string(),
                found: found.to_string(),
            });
        }
    }
    if header.len() != expected.len() {
        return Err(DataError::Header {
            column: expected.len(),
            expected: "<end of header>".into(),
            found: header.get(expected.len()).unwrap_or("").to_string(),
        });
    }

    let mut samples = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let row = i + 1;
        let rec = rec?;
        let malformed = |column: &str, message: String| DataError::Malformed {
            row,
            column: column.to_string(),
            message,
        };
        if rec.len() != expected.len() {
            return Err(malformed(
                "*",
                format!("expected {} fields, found {}", expected.len(), rec.len()),
            ));
        }
        let id = rec[0].trim().to_string();
        if id.is_empty() {
            return Err(malformed("id", "empty id".into()));
        }
        let year: i32 = rec[1]
            .trim()
            .parse()
            .map_err(|_| malformed("year", format!("not an integer year: `{}`", &rec[1])))?;
        let label = rec[2]
            .trim()
            .parse::<u8>()
            .ok()
            .and_then(Label::from_u8)
            .ok_or_else(|| {
                malformed("label", format!("label must be 0 or 1, got `{}`", &rec[2]))
            })?;
        let source = Source::parse(rec[3].trim()).ok_or_else(|| {
            malformed(
                "source",
                format!("source must be emulator or real, got `{}`", &rec[3]),
            )
        })?;
        let mut features = Vec::with_capacity(schema.len());
        for (j, name) in schema.names().iter().enumerate() {
            let raw = rec[META_COLUMNS.len() + j].trim();
            let v: f64 = raw
                .parse()
                .map_err(|_| malformed(name, format!("not a number: `{raw}`")))?;
            let block = schema.block_of(j);
            if !block.admits(v) {
                return Err(DataError::DomainViolation {
                    row,
                    column: name.clone(),
                    value: v,
                    block,
                });
            }
            features.push(v);
        }
        samples.push(Sample {
            id,
            year,
            label,
            source,
            features,
        });
    }
    TemporalDataset::new(schema, samples)
}

/// Samples of one calendar year.
#[derive(Debug, Clone, PartialEq)]
pub struct YearSlice {
    pub year: i32,
    pub samples: Vec<Sample>,
}

impl YearSlice {
    pub fn class_counts(&self) -> (usize, usize) {
        class_counts(&self.samples)
    }

    pub fn stratified_split(
        &self,
        train_frac: f64,
        seed: u64,
    ) -> Result<(Vec<Sample>, Vec<Sample>)> {
        stratified_split(&self.samples, train_frac, seed)
    }
}

/// Group samples by year. Keys are exactly the years present.
pub fn partition_by_year(ds: &TemporalDataset) -> BTreeMap<i32, YearSlice> {
    let mut out: BTreeMap<i32, YearSlice> = BTreeMap::new();
    for s in ds.samples() {
        out.entry(s.year)
            .or_insert_with(|| YearSlice {
                year: s.year,
                samples: Vec::new(),
            })
            .samples
            .push(s.clone());
    }
    out
}

/// (benign, malware) counts.
pub fn class_counts(samples: &[Sample]) -> (usize, usize) {
    let malware = samples.iter().filter(|s| s.label == Label::Malware).count();
    (samples.len() - malware, malware)
}

fn by_class_sorted(samples: &[Sample]) -> [Vec<&Sample>; 2] {
    let mut classes: [Vec<&Sample>; 2] = [Vec::new(), Vec::new()];
    for s in samples {
        classes[s.label.as_u8() as usize].push(s);
    }
    for c in &mut classes {
        c.sort_by(|a, b| a.id.cmp(&b.id));
    }
    classes
}

/// Per-class seeded split. Each class contributes `round(train_frac * n_class)`
/// samples to the training side. Both outputs are sorted by id.
pub fn stratified_split(
    samples: &[Sample],
    train_frac: f64,
    seed: u64,
) -> Result<(Vec<Sample>, Vec<Sample>)> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(DataError::Stratification(format!(
            "train fraction {train_frac} outside (0, 1)"
        )));
    }
    let classes = by_class_sorted(samples);
    for (c, members) in classes.iter().enumerate() {
        if members.is_empty() {
            let name = if c == 0 { "benign" } else { "malware" };
            return Err(DataError::Stratification(format!("no {name} samples")));
        }
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (c, mut members) in classes.into_iter().enumerate() {
        let mut rng = seed::rng_for(seed, &["stratified-split", &c.to_string()]);
        members.shuffle(&mut rng);
        let n_train = (train_frac * members.len() as f64).round() as usize;
        train.extend(members[..n_train].iter().map(|s| (*s).clone()));
        test.extend(members[n_train..].iter().map(|s| (*s).clone()));
    }
    train.sort_by(|a, b| a.id.cmp(&b.id));
    test.sort_by(|a, b| a.id.cmp(&b.id));
    Ok((train, test))
}

/// Seeded draw of exactly `benign` benign and `malware` malware samples.
pub fn stratified_subsample(
    pool: &[Sample],
    benign: usize,
    malware: usize,
    seed: u64,
) -> Result<Vec<Sample>> {
    let classes = by_class_sorted(pool);
    let want = [benign, malware];
    let mut out = Vec::with_capacity(benign + malware);
    for (c, mut members) in classes.into_iter().enumerate() {
        if members.len() < want[c] {
            return Err(DataError::Stratification(format!(
                "pool holds {} samples of class {c}, {} requested",
                members.len(),
                want[c]
            )));
        }
        let mut rng = seed::rng_for(seed, &["stratified-subsample", &c.to_string()]);
        members.shuffle(&mut rng);
        out.extend(members[..want[c]].iter().map(|s| (*s).clone()));
    }
    out.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(out)
}

/// Kind of distribution shift injected by the generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DriftKind {
    /// P(x) moves, P(y|x) fixed up to translation.
    Virtual,
    /// Class-conditional means swap order, P(y|x) changes.
    Real,
    Hybrid,
}

impl DriftKind {
    fn has_virtual(self) -> bool {
        matches!(self, DriftKind::Virtual | DriftKind::Hybrid)
    }

    fn has_real(self) -> bool {
        matches!(self, DriftKind::Real | DriftKind::Hybrid)
    }
}

/// Probability units moved by a static coordinate per unit of `drift_rate`.
pub const STATIC_DRIFT_SCALE: f64 = 0.1;

fn default_start_year() -> i32 {
    2010
}
fn default_drift_fraction() -> f64 {
    0.3
}
fn default_class_separation() -> f64 {
    0.5
}
fn default_source() -> Source {
    Source::Emulator
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub years: usize,
    pub per_year_per_class: usize,
    pub d_static: usize,
    pub d_dynamic: usize,
    pub drift_kind: DriftKind,
    /// Per-year shift magnitude in count units (dynamic block).
    pub drift_rate: f64,
    pub seed: u64,
    #[serde(default = "default_start_year")]
    pub start_year: i32,
    /// Share of each block's coordinates subject to each drift mechanism.
    #[serde(default = "default_drift_fraction")]
    pub drift_fraction: f64,
    /// Scale of the per-coordinate class mean gap.
    #[serde(default = "default_class_separation")]
    pub class_separation: f64,
    #[serde(default = "default_source")]
    pub source: Source,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(DataError::Schema(format!("invalid synth config: {m}")));
        if self.years == 0 || self.per_year_per_class == 0 {
            return bad("years and per_year_per_class must be positive");
        }
        if self.d_static + self.d_dynamic == 0 {
            return bad("at least one feature required");
        }
        if !(self.drift_rate >= 0.0 && self.drift_rate.is_finite()) {
            return bad("drift_rate must be >= 0");
        }
        if !(0.0..=0.5).contains(&self.drift_fraction) {
            return bad("drift_fraction must lie in [0, 0.5]");
        }
        if self.class_separation.is_nan() || self.class_separation < 0.0 {
            return bad("class_separation must be >= 0");
        }
        Ok(())
    }
}

/// Per-coordinate generating parameters derived from a [`SynthConfig`].
#[derive(Debug, Clone)]
pub struct SynthPlan {
    cfg: SynthConfig,
    schema: FeatureSchema,
    /// Year-0 class means, indexed `[class][feature]`.
    base: [Vec<f64>; 2],
    virtual_coords: Vec<bool>,
    real_coords: Vec<bool>,
}

impl SynthPlan {
    pub fn new(cfg: &SynthConfig) -> Result<Self> {
        cfg.validate()?;
        let schema = FeatureSchema::synthetic(cfg.d_static, cfg.d_dynamic);
        let mut rng = seed::rng_for(cfg.seed, &["synth-plan"]);
        let d = schema.len();
        let mut base = [vec![0.0; d], vec![0.0; d]];
        for (j, block) in schema.blocks().iter().enumerate() {
            let u: f64 = rng.random_range(-1.0..1.0);
            let (benign, malware) = match block {
                Block::Static => {
                    let p: f64 = rng.random_range(0.15..0.6);
                    let gap = cfg.class_separation * 0.3 * u;
                    (p - gap / 2.0, p + gap / 2.0)
                }
                Block::Dynamic => {
                    let rate: f64 = rng.random_range(2.0..8.0);
                    let gap = cfg.class_separation * rate.sqrt() * u;
                    ((rate - gap / 2.0).max(0.2), (rate + gap / 2.0).max(0.2))
                }
            };
            base[0][j] = benign;
            base[1][j] = malware;
        }
        let mut virtual_coords = vec![false; d];
        let mut real_coords = vec![false; d];
        for block in [Block::Static, Block::Dynamic] {
            let mut idx = schema.indices_of(block);
            idx.shuffle(&mut rng);
            let n = (cfg.drift_fraction * idx.len() as f64).round() as usize;
            for &j in &idx[..n] {
                virtual_coords[j] = true;
            }
            for &j in &idx[n..(2 * n).min(idx.len())] {
                real_coords[j] = true;
            }
        }
        Ok(Self {
            cfg: cfg.clone(),
            schema,
            base,
            virtual_coords,
            real_coords,
        })
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    /// Coordinates translated under virtual drift.
    pub fn virtual_coords(&self) -> Vec<usize> {
        (0..self.schema.len())
            .filter(|&j| self.virtual_coords[j])
            .collect()
    }

    /// Coordinates whose class ordering swaps under real drift.
    pub fn real_coords(&self) -> Vec<usize> {
        (0..self.schema.len())
            .filter(|&j| self.real_coords[j])
            .collect()
    }

    /// Class-conditional mean (Bernoulli p or Poisson rate) at year offset `t`.
    pub fn mean(&self, t: usize, label: Label, j: usize) -> f64 {
        let scale = match self.schema.block_of(j) {
            Block::Static => STATIC_DRIFT_SCALE,
            Block::Dynamic => 1.0,
        };
        let shift = self.cfg.drift_rate * scale * t as f64;
        let own = self.base[label.as_u8() as usize][j];
        let other = self.base[label.flipped().as_u8() as usize][j];
        let mut m = own;
        if self.cfg.drift_kind.has_real() && self.real_coords[j] {
            let gap = other - own;
            m += gap.signum() * shift.min(gap.abs());
        }
        if self.cfg.drift_kind.has_virtual() && self.virtual_coords[j] {
            m += shift;
        }
        match self.schema.block_of(j) {
            Block::Static => m.clamp(0.01, 0.99),
            Block::Dynamic => m.max(0.0),
        }
    }
}

/// Generate a labelled multi-year dataset with the configured drift.
pub fn synthesize(cfg: &SynthConfig) -> Result<TemporalDataset> {
    let plan = SynthPlan::new(cfg)?;
    let schema = plan.schema().clone();
    let mut samples = Vec::with_capacity(cfg.years * 2 * cfg.per_year_per_class);
    for t in 0..cfg.years {
        let year = cfg.start_year + t as i32;
        let mut rng = seed::rng_for(cfg.seed, &["synth-year", &year.to_string()]);
        for label in [Label::Benign, Label::Malware] {
            let means: Vec<f64> = (0..schema.len()).map(|j| plan.mean(t, label, j)).collect();
            for i in 0..cfg.per_year_per_class {
                let features = means
                    .iter()
                    .zip(schema.blocks())
                    .map(|(&m, block)| match block {
                        Block::Static => {
                            let hit = Bernoulli::new(m)
                                .expect("p clamped to (0,1)")
                                .sample(&mut rng);
                            if hit {
                                1.0
                            } else {
                                0.0
                            }
                        }
                        Block::Dynamic if m <= 0.0 => 0.0,
                        Block::Dynamic => {
                            let v: f64 = Poisson::new(m).expect("positive rate").sample(&mut rng);
                            v.round().max(0.0)
                        }
                    })
                    .collect();
                samples.push(Sample {
                    id: format!("y{year}-{}-{i:05}", label.as_u8()),
                    year,
                    label,
                    source: cfg.source,
                    features,
                });
            }
        }
    }
    TemporalDataset::new(schema, samples)
}

/// Index from sample id to position, used by provenance checks.
pub fn id_index(samples: &[Sample]) -> HashMap<&str, usize> {
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| (s.id.as_str(), i))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(id: &str, year: i32, label: Label, features: Vec<f64>) -> Sample {
        Sample {
            id: id.into(),
            year,
            label,
            source: Source::Emulator,
            features,
        }
    }

    fn slice_with(benign: usize, malware: usize) -> YearSlice {
        let mut samples = Vec::new();
        for i in 0..benign {
            samples.push(sample(&format!("b{i}"), 2010, Label::Benign, vec![0.0]));
        }
        for i in 0..malware {
            samples.push(sample(&format!("m{i}"), 2010, Label::Malware, vec![1.0]));
        }
        YearSlice {
            year: 2010,
            samples,
        }
    }

    fn small_cfg(kind: DriftKind, rate: f64) -> SynthConfig {
        SynthConfig {
            years: 3,
            per_year_per_class: 20,
            d_static: 4,
            d_dynamic: 6,
            drift_kind: kind,
            drift_rate: rate,
            seed: 7,
            start_year: 2010,
            drift_fraction: 0.3,
            class_separation: 0.5,
            source: Source::Emulator,
        }
    }

    #[test]
    fn schema_rejects_duplicates() {
        let r = FeatureSchema::new(vec![
            ("a".into(), Block::Static),
            ("a".into(), Block::Dynamic),
        ]);
        assert!(matches!(r, Err(DataError::Schema(_))));
    }

    #[test]
    fn schema_counts_and_restrict() {
        let s = FeatureSchema::synthetic(3, 5);
        assert_eq!(s.d_static() + s.d_dynamic(), s.len());
        let (sub, idx) = s.restrict(FeatureSpace::Dynamic);
        assert_eq!(sub.len(), 5);
        assert_eq!(idx, vec![3, 4, 5, 6, 7]);
        assert!(sub.blocks().iter().all(|b| *b == Block::Dynamic));
    }

    #[test]
    fn schema_json_round_trip() {
        let s = FeatureSchema::synthetic(2, 2);
        assert_eq!(
            FeatureSchema::from_json_str(&s.to_json_string()).unwrap(),
            s
        );
    }

    #[test]
    fn partition_sizes() {
        let schema = FeatureSchema::synthetic(1, 0);
        let samples = vec![
            sample("a", 2010, Label::Benign, vec![0.0]),
            sample("b", 2010, Label::Malware, vec![1.0]),
            sample("c", 2011, Label::Benign, vec![0.0]),
            sample("d", 2010, Label::Benign, vec![1.0]),
            sample("e", 2011, Label::Malware, vec![0.0]),
        ];
        let ds = TemporalDataset::new(schema, samples).unwrap();
        let parts = partition_by_year(&ds);
        assert_eq!(parts.keys().copied().collect::<Vec<_>>(), vec![2010, 2011]);
        assert_eq!(parts[&2010].samples.len(), 3);
        assert_eq!(parts[&2011].samples.len(), 2);
        assert!(parts
            .values()
            .all(|s| s.samples.iter().all(|x| x.year == s.year)));
    }

    #[test]
    fn single_year_partition_is_identity() {
        let slice = slice_with(3, 2);
        let ds =
            TemporalDataset::new(FeatureSchema::synthetic(1, 0), slice.samples.clone()).unwrap();
        let parts = partition_by_year(&ds);
        assert_eq!(parts.len(), 1);
        assert_eq!(parts[&2010], slice);
    }

    #[test]
    fn stratified_split_counts() {
        let slice = slice_with(100, 100);
        let (train, test) = slice.stratified_split(0.7, 42).unwrap();
        assert_eq!(class_counts(&train), (70, 70));
        assert_eq!(class_counts(&test), (30, 30));
        let train_ids: HashSet<_> = train.iter().map(|s| &s.id).collect();
        assert!(test.iter().all(|s| !train_ids.contains(&s.id)));
    }

    #[test]
    fn stratified_split_deterministic() {
        let slice = slice_with(37, 23);
        let a = slice.stratified_split(0.7, 42).unwrap();
        let b = slice.stratified_split(0.7, 42).unwrap();
        assert_eq!(a, b);
        let c = slice.stratified_split(0.7, 43).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn stratified_split_requires_both_classes() {
        let slice = slice_with(10, 0);
        assert!(matches!(
            slice.stratified_split(0.7, 42),
            Err(DataError::Stratification(_))
        ));
        assert!(slice_with(5, 5).stratified_split(1.0, 1).is_err());
    }

    #[test]
    fn subsample_exact_counts() {
        let slice = slice_with(30, 20);
        let sub = stratified_subsample(&slice.samples, 7, 11, 1).unwrap();
        assert_eq!(class_counts(&sub), (7, 11));
        assert!(stratified_subsample(&slice.samples, 31, 1, 1).is_err());
    }

    #[test]
    fn csv_rejects_static_two() {
        let schema = FeatureSchema::synthetic(1, 1);
        let csv = "id,year,label,source,s000,d000\na,2010,0,emulator,1,3\nb,2010,1,real,2,0\n";
        match load_csv_with_schema(csv.as_bytes(), schema) {
            Err(DataError::DomainViolation { row, column, .. }) => {
                assert_eq!(row, 2);
                assert_eq!(column, "s000");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn csv_rejects_fractional_and_negative_counts() {
        let schema = FeatureSchema::synthetic(1, 1);
        for bad in ["1.5", "-1"] {
            let csv = format!("id,year,label,source,s000,d000\na,2010,0,emulator,1,{bad}\n");
            assert!(matches!(
                load_csv_with_schema(csv.as_bytes(), schema.clone()),
                Err(DataError::DomainViolation { row: 1, .. })
            ));
        }
    }

    #[test]
    fn csv_malformed_names_row_and_column() {
        let schema = FeatureSchema::synthetic(1, 1);
        let csv = "id,year,label,source,s000,d000\na,2010,0,emulator,1,3\nb,20x0,1,real,0,0\n";
        match load_csv_with_schema(csv.as_bytes(), schema) {
            Err(DataError::Malformed { row, column, .. }) => {
                assert_eq!((row, column.as_str()), (2, "year"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn csv_empty_is_no_samples() {
        let schema = FeatureSchema::synthetic(1, 1);
        let err = load_csv_with_schema("".as_bytes(), schema.clone()).unwrap_err();
        assert_eq!(err.to_string(), "no samples");
        let err = load_csv_with_schema("id,year,label,source,s000,d000\n".as_bytes(), schema)
            .unwrap_err();
        assert!(matches!(err, DataError::NoSamples));
    }

    #[test]
    fn csv_header_mismatch() {
        let schema = FeatureSchema::synthetic(1, 1);
        let csv = "id,year,label,source,d000,s000\na,2010,0,emulator,1,3\n";
        assert!(matches!(
            load_csv_with_schema(csv.as_bytes(), schema),
            Err(DataError::Header { column: 4, .. })
        ));
    }

    #[test]
    fn synth_row_count_and_domains() {
        let cfg = small_cfg(DriftKind::Hybrid, 0.5);
        let ds = synthesize(&cfg).unwrap();
        assert_eq!(ds.len(), cfg.years * 2 * cfg.per_year_per_class);
        assert_eq!(ds.years(), vec![2010, 2011, 2012]);
        for s in ds.samples() {
            assert!(ds.schema().first_violation(&s.features).is_none());
        }
    }

    #[test]
    fn synth_deterministic() {
        let cfg = small_cfg(DriftKind::Real, 0.3);
        let mut a = Vec::new();
        let mut b = Vec::new();
        synthesize(&cfg).unwrap().write_csv(&mut a).unwrap();
        synthesize(&cfg).unwrap().write_csv(&mut b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn synth_csv_round_trip() {
        let cfg = small_cfg(DriftKind::Virtual, 0.0);
        let ds = synthesize(&cfg).unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let back = load_csv_with_schema(buf.as_slice(), ds.schema().clone()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn real_drift_swaps_ordering() {
        let mut cfg = small_cfg(DriftKind::Real, 10.0);
        cfg.d_dynamic = 20;
        let plan = SynthPlan::new(&cfg).unwrap();
        let real = plan.real_coords();
        assert!(!real.is_empty());
        for j in real {
            let before = plan.mean(0, Label::Malware, j) - plan.mean(0, Label::Benign, j);
            let after = plan.mean(2, Label::Malware, j) - plan.mean(2, Label::Benign, j);
            assert!((before + after).abs() < 1e-12, "coordinate {j} not swapped");
        }
    }

    #[test]
    fn invalid_synth_config() {
        let mut cfg = small_cfg(DriftKind::Virtual, -1.0);
        assert!(synthesize(&cfg).is_err());
        cfg.drift_rate = 0.1;
        cfg.years = 0;
        assert!(synthesize(&cfg).is_err());
    }
}
