//! Result store, report tables and plot data.
//!
//! `results.csv` holds one row per completed run, `skips.csv` and
//! `failures.csv` the rest. Tables and plot data are computed from those
//! files alone, so regenerating them from an existing store is idempotent.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attacks::{attack_batch, EditBudget};
use crate::config::RunConfig;
use crate::data::FeatureSpace;
use crate::data::Label;
use crate::metrics::{bootstrap_median_ci, lower_median, spearman, AAF_DISPLAY_MIN_BASELINE_ASR};
use crate::models::ModelFamily;
use crate::models::SurrogateModel;
use crate::preprocess::Standardizer;
use crate::protocols::{
    assemble_train, enumerate_runs, execute_matrix, format_years, parse_years, ProtocolError,
    ProtocolKind, RunAttack, RunKey, RunOutcome, RunResult, TrainCell,
};
use crate::seed;

pub const RESULTS_FILE: &str = "results.csv";
pub const SKIPS_FILE: &str = "skips.csv";
pub const FAILURES_FILE: &str = "failures.csv";
pub const META_FILE: &str = "meta.json";

/// Marker for an undefined table cell.
pub const UNDEFINED: &str = "--";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("malformed {file} row {row}: {message}")]
    Malformed {
        file: String,
        row: usize,
        message: String,
    },
    #[error("table `{table}` has no input rows ({needed}); absent runs: {absent}")]
    MissingRows {
        table: &'static str,
        needed: String,
        absent: String,
    },
    #[error("unknown table `{0}`")]
    UnknownTable(String),
    #[error(transparent)]
    Data(#[from] crate::data::DataError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("{0} runs failed; see {FAILURES_FILE}")]
    RunsFailed(usize),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ReportError + '_ {
    move |source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Fixed six-decimal rendering; negative zero prints as zero.
pub fn fmt6(v: f64) -> String {
    let s = format!("{v:.6}");
    if s == "-0.000000" {
        "0.000000".into()
    } else {
        s
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt6).unwrap_or_default()
}

fn cell(v: Option<f64>) -> String {
    v.map(fmt6).unwrap_or_else(|| UNDEFINED.into())
}

fn parse_space(s: &str) -> Option<FeatureSpace> {
    match s {
        "static" => Some(FeatureSpace::Static),
        "dynamic" => Some(FeatureSpace::Dynamic),
        _ => None,
    }
}

const KEY_COLUMNS: [&str; 7] = [
    "dataset",
    "protocol",
    "feature_space",
    "train_years",
    "test_year",
    "model",
    "attack",
];

fn key_fields(k: &RunKey) -> Vec<String> {
    vec![
        k.dataset.clone(),
        k.protocol.to_string(),
        k.space.to_string(),
        format_years(&k.train_years),
        k.test_year.to_string(),
        k.model.to_string(),
        k.attack.as_str().to_string(),
    ]
}

/// One completed run as stored in `results.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub key: RunKey,
    pub gap: i32,
    pub train_size: usize,
    pub n_test: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub macro_f1: f64,
    pub aa: f64,
    pub asr: f64,
    pub asr_defined: bool,
    pub corrected: usize,
    pub raw_l0: Option<f64>,
    pub projected_l0: Option<f64>,
    pub removal: Option<f64>,
    pub robust_drop: Option<f64>,
    pub delta_asr: Option<f64>,
    pub aaf: Option<f64>,
    pub baseline_asr: Option<f64>,
    pub fit_key: String,
}

const RESULT_COLUMNS: [&str; 20] = [
    "gap",
    "train_size",
    "n_test",
    "accuracy",
    "precision",
    "recall",
    "macro_f1",
    "aa",
    "asr",
    "asr_defined",
    "corrected",
    "raw_l0",
    "projected_l0",
    "removal",
    "robust_drop",
    "delta_asr",
    "aaf",
    "baseline_asr",
    "fit_key",
    "aaf_display",
];

impl From<&RunResult> for ResultRow {
    fn from(r: &RunResult) -> Self {
        let m = &r.metrics;
        Self {
            key: r.key.clone(),
            gap: r.key.gap(),
            train_size: r.train_size,
            n_test: m.n,
            accuracy: m.accuracy,
            precision: m.precision,
            recall: m.recall,
            macro_f1: m.macro_f1,
            aa: m.aa,
            asr: m.asr,
            asr_defined: m.asr_defined,
            corrected: m.corrected,
            raw_l0: r.diagnostics.map(|d| d.raw_l0_mean),
            projected_l0: r.diagnostics.map(|d| d.projected_l0_mean),
            removal: r.diagnostics.map(|d| d.removal_mean),
            robust_drop: r.linkage.map(|l| l.robust_drop),
            delta_asr: r.linkage.map(|l| l.delta_asr),
            aaf: r.linkage.map(|l| l.aaf),
            baseline_asr: r.baseline_asr,
            fit_key: r.standardizer_fit_key.clone(),
        }
    }
}

impl ResultRow {
    /// AAF as shown in tables: hidden when the baseline ASR is negligible.
    pub fn aaf_display(&self) -> Option<f64> {
        match (self.aaf, self.baseline_asr) {
            (Some(a), Some(b)) if b >= AAF_DISPLAY_MIN_BASELINE_ASR => Some(a),
            _ => None,
        }
    }

    fn fields(&self) -> Vec<String> {
        let mut f = key_fields(&self.key);
        f.extend([
            self.gap.to_string(),
            self.train_size.to_string(),
            self.n_test.to_string(),
            fmt6(self.accuracy),
            fmt6(self.precision),
            fmt6(self.recall),
            fmt6(self.macro_f1),
            fmt6(self.aa),
            fmt6(self.asr),
            self.asr_defined.to_string(),
            self.corrected.to_string(),
            fmt_opt(self.raw_l0),
            fmt_opt(self.projected_l0),
            fmt_opt(self.removal),
            fmt_opt(self.robust_drop),
            fmt_opt(self.delta_asr),
            fmt_opt(self.aaf),
            fmt_opt(self.baseline_asr),
            self.fit_key.clone(),
            fmt_opt(self.aaf_display()),
        ]);
        f
    }
}

/// A run that produced no metrics, with its reason.
#[derive(Debug, Clone, PartialEq)]
pub struct SkipRow {
    pub key: RunKey,
    pub reason: String,
    pub detail: String,
}

/// Everything persisted by a run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResultStore {
    pub results: Vec<ResultRow>,
    pub skips: Vec<SkipRow>,
    pub failures: Vec<SkipRow>,
}

/// Report parameters recorded next to the store.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StoreMeta {
    pub seed: u64,
    pub bootstrap_samples: usize,
}

impl Default for StoreMeta {
    fn default() -> Self {
        Self {
            seed: seed::DEFAULT_SEED,
            bootstrap_samples: 1000,
        }
    }
}

impl ResultStore {
    pub fn from_outcomes(outcomes: &[RunOutcome]) -> Self {
        let mut store = Self::default();
        for o in outcomes {
            match o {
                RunOutcome::Done(r) => store.results.push(ResultRow::from(r)),
                RunOutcome::Skipped { key, reason } => store.skips.push(SkipRow {
                    key: key.clone(),
                    reason: reason.reason.clone(),
                    detail: reason.detail.clone(),
                }),
                RunOutcome::Failed { key, error } => store.failures.push(SkipRow {
                    key: key.clone(),
                    reason: "error".into(),
                    detail: error.clone(),
                }),
            }
        }
        store
    }

    pub fn write(&self, dir: &Path) -> Result<(), ReportError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let mut w = csv::Writer::from_path(dir.join(RESULTS_FILE))?;
        w.write_record(KEY_COLUMNS.iter().chain(RESULT_COLUMNS.iter()))?;
        for r in &self.results {
            w.write_record(r.fields())?;
        }
        w.flush().map_err(io_err(dir))?;
        for (file, rows) in [(SKIPS_FILE, &self.skips), (FAILURES_FILE, &self.failures)] {
            let mut w = csv::Writer::from_path(dir.join(file))?;
            w.write_record(KEY_COLUMNS.iter().chain(["reason", "detail"].iter()))?;
            for s in rows.iter() {
                let mut f = key_fields(&s.key);
                f.push(s.reason.clone());
                f.push(s.detail.clone());
                w.write_record(f)?;
            }
            w.flush().map_err(io_err(dir))?;
        }
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self, ReportError> {
        let results = read_rows(&dir.join(RESULTS_FILE), RESULTS_FILE, parse_result)?;
        let skips = read_rows(&dir.join(SKIPS_FILE), SKIPS_FILE, parse_skip)?;
        let failures_path = dir.join(FAILURES_FILE);
        let failures = if failures_path.exists() {
            read_rows(&failures_path, FAILURES_FILE, parse_skip)?
        } else {
            Vec::new()
        };
        Ok(Self {
            results,
            skips,
            failures,
        })
    }
}

fn read_rows<T>(
    path: &Path,
    file: &str,
    parse: impl Fn(&csv::StringRecord) -> Result<T, String>,
) -> Result<Vec<T>, ReportError> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        out.push(parse(&rec).map_err(|message| ReportError::Malformed {
            file: file.to_string(),
            row: i + 1,
            message,
        })?);
    }
    Ok(out)
}

fn parse_key(rec: &csv::StringRecord) -> Result<RunKey, String> {
    let get = |i: usize| {
        rec.get(i)
            .ok_or_else(|| format!("missing column {}", KEY_COLUMNS[i]))
    };
    Ok(RunKey {
        dataset: get(0)?.to_string(),
        protocol: ProtocolKind::parse(get(1)?).ok_or("bad protocol")?,
        space: parse_space(get(2)?).ok_or("bad feature_space")?,
        train_years: parse_years(get(3)?).ok_or("bad train_years")?,
        test_year: get(4)?.parse().map_err(|_| "bad test_year")?,
        model: get(5)?.parse()?,
        attack: RunAttack::parse(get(6)?).ok_or("bad attack")?,
    })
}

fn parse_skip(rec: &csv::StringRecord) -> Result<SkipRow, String> {
    Ok(SkipRow {
        key: parse_key(rec)?,
        reason: rec.get(7).unwrap_or_default().to_string(),
        detail: rec.get(8).unwrap_or_default().to_string(),
    })
}

fn parse_result(rec: &csv::StringRecord) -> Result<ResultRow, String> {
    let key = parse_key(rec)?;
    let col = |name: &str| -> Result<&str, String> {
        let i = RESULT_COLUMNS
            .iter()
            .position(|c| *c == name)
            .expect("known column")
            + KEY_COLUMNS.len();
        rec.get(i).ok_or_else(|| format!("missing column {name}"))
    };
    let num = |name: &str| -> Result<f64, String> {
        col(name)?.parse().map_err(|_| format!("bad {name}"))
    };
    let int = |name: &str| -> Result<usize, String> {
        col(name)?.parse().map_err(|_| format!("bad {name}"))
    };
    let opt = |name: &str| -> Result<Option<f64>, String> {
        match col(name)? {
            "" => Ok(None),
            s => s.parse().map(Some).map_err(|_| format!("bad {name}")),
        }
    };
    Ok(ResultRow {
        key,
        gap: col("gap")?.parse().map_err(|_| "bad gap")?,
        train_size: int("train_size")?,
        n_test: int("n_test")?,
        accuracy: num("accuracy")?,
        precision: num("precision")?,
        recall: num("recall")?,
        macro_f1: num("macro_f1")?,
        aa: num("aa")?,
        asr: num("asr")?,
        asr_defined: col("asr_defined")?.parse().map_err(|_| "bad asr_defined")?,
        corrected: int("corrected")?,
        raw_l0: opt("raw_l0")?,
        projected_l0: opt("projected_l0")?,
        removal: opt("removal")?,
        robust_drop: opt("robust_drop")?,
        delta_asr: opt("delta_asr")?,
        aaf: opt("aaf")?,
        baseline_asr: opt("baseline_asr")?,
        fit_key: col("fit_key")?.to_string(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TableKind {
    Diagnostics,
    SpearmanGap,
    ProtocolComparison,
    LinkageSummary,
    TimeSeries,
}

impl TableKind {
    pub const ALL: [TableKind; 5] = [
        TableKind::Diagnostics,
        TableKind::SpearmanGap,
        TableKind::ProtocolComparison,
        TableKind::LinkageSummary,
        TableKind::TimeSeries,
    ];

    /// Name used on the command line and as the file stem.
    pub fn as_str(self) -> &'static str {
        match self {
            TableKind::Diagnostics => "diagnostics",
            TableKind::SpearmanGap => "spearman",
            TableKind::ProtocolComparison => "protocols",
            TableKind::LinkageSummary => "linkage",
            TableKind::TimeSeries => "timeseries",
        }
    }

    pub fn parse(s: &str) -> Result<Self, ReportError> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| ReportError::UnknownTable(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub kind: TableKind,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(kind: TableKind, header: &[&str]) -> Self {
        Self {
            kind,
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), ReportError> {
        write_csv(path, &self.header, &self.rows)
    }

    /// Column-aligned text for the terminal.
    pub fn to_text(&self) -> String {
        let mut width: Vec<usize> = self.header.iter().map(String::len).collect();
        for r in &self.rows {
            for (w, c) in width.iter_mut().zip(r) {
                *w = (*w).max(c.len());
            }
        }
        let line = |cells: &[String]| {
            cells
                .iter()
                .zip(&width)
                .map(|(c, w)| format!("{c:<w$}"))
                .collect::<Vec<_>>()
                .join("  ")
                .trim_end()
                .to_string()
        };
        let mut out = line(&self.header);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&line(r));
            out.push('\n');
        }
        out
    }
}

fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<(), ReportError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

fn median_by(rows: &[&ResultRow], f: impl Fn(&ResultRow) -> Option<f64>) -> Option<f64> {
    let v: Vec<f64> = rows.iter().filter_map(|r| f(r)).collect();
    lower_median(&v)
}

/// Per-model means, then the lower median across models.
fn median_over_models(rows: &[&ResultRow], f: impl Fn(&ResultRow) -> Option<f64>) -> Option<f64> {
    let mut per_model: BTreeMap<ModelFamily, Vec<f64>> = BTreeMap::new();
    for r in rows {
        if let Some(v) = f(r) {
            per_model.entry(r.key.model).or_default().push(v);
        }
    }
    let means: Vec<f64> = per_model
        .values()
        .map(|v| v.iter().sum::<f64>() / v.len() as f64)
        .collect();
    lower_median(&means)
}

fn absent_list(store: &ResultStore, pred: impl Fn(&RunKey) -> bool) -> String {
    let keys: Vec<String> = store
        .skips
        .iter()
        .chain(&store.failures)
        .filter(|s| pred(&s.key))
        .map(|s| format!("{} ({})", s.key, s.reason))
        .collect();
    if keys.is_empty() {
        "none enumerated".into()
    } else {
        keys.join("; ")
    }
}

fn missing(
    table: &'static str,
    needed: &str,
    store: &ResultStore,
    pred: impl Fn(&RunKey) -> bool,
) -> ReportError {
    ReportError::MissingRows {
        table,
        needed: needed.into(),
        absent: absent_list(store, pred),
    }
}

/// Build one table from a store.
pub fn build_table(
    kind: TableKind,
    store: &ResultStore,
    meta: &StoreMeta,
) -> Result<Table, ReportError> {
    match kind {
        TableKind::Diagnostics => diagnostics(store),
        TableKind::SpearmanGap => spearman_gap(store),
        TableKind::ProtocolComparison => protocol_comparison(store),
        TableKind::LinkageSummary => linkage_summary(store, meta),
        TableKind::TimeSeries => time_series(store),
    }
}

fn diagnostics(store: &ResultStore) -> Result<Table, ReportError> {
    let mut t = Table::new(
        TableKind::Diagnostics,
        &[
            "dataset",
            "feature_space",
            "fgsm_raw_l0",
            "fgsm_proj_l0",
            "fgsm_removal",
            "fgsm_asr",
            "spsa_raw_l0",
            "spsa_proj_l0",
            "spsa_removal",
            "spsa_asr",
        ],
    );
    let mut groups: BTreeMap<(String, FeatureSpace), Vec<&ResultRow>> = BTreeMap::new();
    for r in &store.results {
        if r.key.is_baseline() && r.key.attack != RunAttack::Clean {
            groups
                .entry((r.key.dataset.clone(), r.key.space))
                .or_default()
                .push(r);
        }
    }
    if groups.is_empty() {
        return Err(missing(
            "diagnostics",
            "attacked baseline runs",
            store,
            |k| k.is_baseline() && k.attack != RunAttack::Clean,
        ));
    }
    for ((dataset, space), rows) in groups {
        let mut row = vec![dataset, space.to_string()];
        for attack in [RunAttack::Fgsm, RunAttack::Spsa] {
            let sub: Vec<&ResultRow> = rows
                .iter()
                .copied()
                .filter(|r| r.key.attack == attack)
                .collect();
            row.push(cell(median_over_models(&sub, |r| r.raw_l0)));
            row.push(cell(median_over_models(&sub, |r| r.projected_l0)));
            row.push(cell(median_over_models(&sub, |r| r.removal)));
            row.push(cell(median_over_models(&sub, |r| {
                r.asr_defined.then_some(r.asr)
            })));
        }
        t.rows.push(row);
    }
    Ok(t)
}

fn spearman_gap(store: &ResultStore) -> Result<Table, ReportError> {
    let mut t = Table::new(
        TableKind::SpearmanGap,
        &["dataset", "feature_space", "attack", "rho", "p_value", "n"],
    );
    let mut groups: BTreeMap<(String, FeatureSpace, RunAttack), Vec<&ResultRow>> = BTreeMap::new();
    for r in &store.results {
        if r.key.protocol == ProtocolKind::CrossYear
            && r.key.attack != RunAttack::Clean
            && r.robust_drop.is_some()
        {
            groups
                .entry((r.key.dataset.clone(), r.key.space, r.key.attack))
                .or_default()
                .push(r);
        }
    }
    if groups.is_empty() {
        return Err(missing(
            "spearman",
            "cross_year transfer runs with a baseline",
            store,
            |k| k.protocol == ProtocolKind::CrossYear,
        ));
    }
    for ((dataset, space, attack), rows) in groups {
        let gaps: Vec<f64> = rows.iter().map(|r| f64::from(r.gap)).collect();
        let rd: Vec<f64> = rows
            .iter()
            .map(|r| r.robust_drop.expect("filtered"))
            .collect();
        let s = spearman(&gaps, &rd).expect("aligned, non-empty");
        t.rows.push(vec![
            dataset,
            space.to_string(),
            attack.as_str().into(),
            cell(s.rho),
            cell(s.p_value),
            s.n.to_string(),
        ]);
    }
    Ok(t)
}

fn protocol_comparison(store: &ResultStore) -> Result<Table, ReportError> {
    let mut t = Table::new(
        TableKind::ProtocolComparison,
        &[
            "dataset",
            "feature_space",
            "protocol",
            "attack",
            "clean_acc",
            "aa",
            "asr",
            "robust_drop",
            "train_size",
            "n_runs",
        ],
    );
    let mut groups: BTreeMap<(String, FeatureSpace, ProtocolKind, RunAttack), Vec<&ResultRow>> =
        BTreeMap::new();
    for r in &store.results {
        // Same-year has no transfer runs; its in-year rows are the comparison.
        let wanted = if r.key.protocol == ProtocolKind::SameYear {
            r.key.is_baseline()
        } else {
            !r.key.is_baseline()
        };
        if wanted {
            groups
                .entry((
                    r.key.dataset.clone(),
                    r.key.space,
                    r.key.protocol,
                    r.key.attack,
                ))
                .or_default()
                .push(r);
        }
    }
    if groups.is_empty() {
        return Err(missing("protocols", "completed runs", store, |_| true));
    }
    for ((dataset, space, protocol, attack), rows) in groups {
        let train = median_by(&rows, |r| Some(r.train_size as f64));
        t.rows.push(vec![
            dataset,
            space.to_string(),
            protocol.to_string(),
            attack.as_str().into(),
            cell(median_by(&rows, |r| Some(r.accuracy))),
            cell(median_by(&rows, |r| Some(r.aa))),
            cell(median_by(&rows, |r| r.asr_defined.then_some(r.asr))),
            cell(median_by(&rows, |r| r.robust_drop)),
            train.map_or_else(|| UNDEFINED.into(), |v| format!("{}", v as usize)),
            rows.len().to_string(),
        ]);
    }
    Ok(t)
}

fn linkage_summary(store: &ResultStore, meta: &StoreMeta) -> Result<Table, ReportError> {
    let mut t = Table::new(
        TableKind::LinkageSummary,
        &[
            "dataset",
            "feature_space",
            "protocol",
            "attack",
            "rho_rd",
            "p_rd",
            "rho_dasr",
            "p_dasr",
            "median_rd",
            "rd_ci_low",
            "rd_ci_high",
            "median_aaf",
            "n",
        ],
    );
    let mut groups: BTreeMap<(String, FeatureSpace, ProtocolKind, RunAttack), Vec<&ResultRow>> =
        BTreeMap::new();
    for r in &store.results {
        if r.robust_drop.is_some() && r.key.attack != RunAttack::Clean {
            groups
                .entry((
                    r.key.dataset.clone(),
                    r.key.space,
                    r.key.protocol,
                    r.key.attack,
                ))
                .or_default()
                .push(r);
        }
    }
    if groups.is_empty() {
        return Err(missing(
            "linkage",
            "attacked transfer runs with a baseline",
            store,
            |k| !k.is_baseline() && k.attack != RunAttack::Clean,
        ));
    }
    for ((dataset, space, protocol, attack), rows) in groups {
        let gaps: Vec<f64> = rows.iter().map(|r| f64::from(r.gap)).collect();
        let rd: Vec<f64> = rows
            .iter()
            .map(|r| r.robust_drop.expect("filtered"))
            .collect();
        let dasr: Vec<f64> = rows
            .iter()
            .map(|r| r.delta_asr.expect("set with robust_drop"))
            .collect();
        let s_rd = spearman(&gaps, &rd).expect("aligned");
        let s_dasr = spearman(&gaps, &dasr).expect("aligned");
        let group = format!("{dataset}|{space}|{protocol}|{}", attack.as_str());
        let ci = bootstrap_median_ci(
            &rd,
            meta.bootstrap_samples,
            seed::derive_seed(meta.seed, &["linkage-ci", &group]),
        );
        let aaf: Vec<f64> = rows.iter().filter_map(|r| r.aaf_display()).collect();
        t.rows.push(vec![
            dataset,
            space.to_string(),
            protocol.to_string(),
            attack.as_str().into(),
            cell(s_rd.rho),
            cell(s_rd.p_value),
            cell(s_dasr.rho),
            cell(s_dasr.p_value),
            cell(lower_median(&rd)),
            cell(ci.map(|c| c.0)),
            cell(ci.map(|c| c.1)),
            cell(lower_median(&aaf)),
            rows.len().to_string(),
        ]);
    }
    Ok(t)
}

type SeriesKey = (String, FeatureSpace, ProtocolKind, RunAttack, Vec<i32>, i32);

fn time_series(store: &ResultStore) -> Result<Table, ReportError> {
    let mut t = Table::new(
        TableKind::TimeSeries,
        &[
            "dataset",
            "feature_space",
            "protocol",
            "attack",
            "train_years",
            "test_year",
            "gap",
            "clean_acc",
            "aa",
            "asr",
            "robust_drop",
            "delta_asr",
            "n_models",
        ],
    );
    let mut groups: BTreeMap<SeriesKey, Vec<&ResultRow>> = BTreeMap::new();
    for r in &store.results {
        let k = &r.key;
        groups
            .entry((
                k.dataset.clone(),
                k.space,
                k.protocol,
                k.attack,
                k.train_years.clone(),
                k.test_year,
            ))
            .or_default()
            .push(r);
    }
    if groups.is_empty() {
        return Err(missing("timeseries", "completed runs", store, |_| true));
    }
    for ((dataset, space, protocol, attack, train_years, test_year), rows) in groups {
        t.rows.push(vec![
            dataset,
            space.to_string(),
            protocol.to_string(),
            attack.as_str().into(),
            format_years(&train_years),
            test_year.to_string(),
            rows[0].gap.to_string(),
            cell(median_by(&rows, |r| Some(r.accuracy))),
            cell(median_by(&rows, |r| Some(r.aa))),
            cell(median_by(&rows, |r| r.asr_defined.then_some(r.asr))),
            cell(median_by(&rows, |r| r.robust_drop)),
            cell(median_by(&rows, |r| r.delta_asr)),
            rows.len().to_string(),
        ]);
    }
    Ok(t)
}

/// Per-figure plot data: run-level gap/robustness points and the
/// cross-year (train year, test year) grid.
pub fn plot_data(store: &ResultStore) -> Vec<(String, Vec<String>, Vec<Vec<String>>)> {
    let header = |cols: &[&str]| cols.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let mut points = Vec::new();
    for r in &store.results {
        if r.robust_drop.is_none() {
            continue;
        }
        let mut row = key_fields(&r.key);
        row.extend([
            r.gap.to_string(),
            fmt6(r.aa),
            fmt_opt(r.robust_drop),
            fmt_opt(r.delta_asr),
            fmt_opt(r.aaf),
        ]);
        points.push(row);
    }
    let mut grid_groups: BTreeMap<(String, FeatureSpace, RunAttack, i32, i32), Vec<&ResultRow>> =
        BTreeMap::new();
    for r in &store.results {
        if r.key.protocol == ProtocolKind::CrossYear {
            grid_groups
                .entry((
                    r.key.dataset.clone(),
                    r.key.space,
                    r.key.attack,
                    r.key.window_end(),
                    r.key.test_year,
                ))
                .or_default()
                .push(r);
        }
    }
    let grid = grid_groups
        .into_iter()
        .map(|((dataset, space, attack, y1, y2), rows)| {
            vec![
                dataset,
                space.to_string(),
                attack.as_str().into(),
                y1.to_string(),
                y2.to_string(),
                cell(median_by(&rows, |r| Some(r.accuracy))),
                cell(median_by(&rows, |r| Some(r.aa))),
                cell(median_by(&rows, |r| r.robust_drop)),
            ]
        })
        .collect();
    let mut point_cols: Vec<&str> = KEY_COLUMNS.to_vec();
    point_cols.extend(["gap", "aa", "robust_drop", "delta_asr", "aaf"]);
    vec![
        ("gap_points.csv".into(), header(&point_cols), points),
        (
            "cross_year_grid.csv".into(),
            header(&[
                "dataset",
                "feature_space",
                "attack",
                "train_year",
                "test_year",
                "clean_acc",
                "aa",
                "robust_drop",
            ]),
            grid,
        ),
    ]
}

pub fn read_meta(dir: &Path) -> StoreMeta {
    fs::read_to_string(dir.join(META_FILE))
        .ok()
        .and_then(|s| serde_json::from_str(&s).ok())
        .unwrap_or_default()
}

/// Regenerate every table whose inputs exist, plus plot data. Returns the
/// tables written.
pub fn write_reports(dir: &Path) -> Result<Vec<TableKind>, ReportError> {
    let store = ResultStore::read(dir)?;
    let meta = read_meta(dir);
    let mut written = Vec::new();
    for kind in TableKind::ALL {
        match build_table(kind, &store, &meta) {
            Ok(t) => {
                t.write_csv(&dir.join("tables").join(format!("{}.csv", kind.as_str())))?;
                written.push(kind);
            }
            Err(ReportError::MissingRows { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    for (name, header, rows) in plot_data(&store) {
        write_csv(&dir.join("plotdata").join(name), &header, &rows)?;
    }
    Ok(written)
}

/// Build a single table from a stored run and write it under `tables/`.
pub fn report(dir: &Path, kind: TableKind) -> Result<Table, ReportError> {
    let store = ResultStore::read(dir)?;
    let t = build_table(kind, &store, &read_meta(dir))?;
    t.write_csv(&dir.join("tables").join(format!("{}.csv", kind.as_str())))?;
    Ok(t)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub enumerated: usize,
    pub completed: usize,
    pub skipped: usize,
    pub failed: usize,
}

/// Every run key a config enumerates, sorted.
pub fn enumerate_config(
    cfg: &RunConfig,
    entries: &[crate::protocols::DatasetEntry],
) -> Result<Vec<RunKey>, ReportError> {
    let attacks = cfg.exec_config().run_attacks();
    let mut keys = Vec::new();
    for e in entries {
        let years = e.dataset.years();
        for &p in &cfg.protocols {
            keys.extend(enumerate_runs(
                &e.name,
                &cfg.protocol_spec(p),
                &years,
                &cfg.feature_spaces,
                &cfg.models,
                &attacks,
            )?);
        }
    }
    keys.sort();
    keys.dedup();
    Ok(keys)
}

/// Execute the full matrix of `cfg`, persist the store and all reports.
/// Completed rows are written even when some runs fail.
pub fn run(cfg: &RunConfig, out_dir: &Path) -> Result<RunSummary, ReportError> {
    let entries = cfg.load_datasets()?;
    let keys = enumerate_config(cfg, &entries)?;
    let exec = cfg.exec_config();
    let frac = cfg.train_frac;
    let outcomes = execute_matrix(&entries, &keys, |_| frac, &exec)?;
    let store = ResultStore::from_outcomes(&outcomes);
    store.write(out_dir)?;
    let meta = StoreMeta {
        seed: cfg.seed,
        bootstrap_samples: cfg.bootstrap_samples,
    };
    let meta_path = out_dir.join(META_FILE);
    let mut f = fs::File::create(&meta_path).map_err(io_err(&meta_path))?;
    writeln!(
        f,
        "{}",
        serde_json::to_string_pretty(&meta).expect("serializable")
    )
    .map_err(io_err(&meta_path))?;
    write_reports(out_dir)?;
    let summary = RunSummary {
        out_dir: out_dir.to_path_buf(),
        enumerated: keys.len(),
        completed: store.results.len(),
        skipped: store.skips.len(),
        failed: store.failures.len(),
    };
    if summary.failed > 0 {
        return Err(ReportError::RunsFailed(summary.failed));
    }
    Ok(summary)
}

/// Per-year attack diagnostics against the surrogate alone: each year's
/// stratified holdout is attacked with a surrogate fitted on the rest of
/// that year. No target models are trained.
pub fn diagnose(cfg: &RunConfig) -> Result<Table, ReportError> {
    let entries = cfg.load_datasets()?;
    let exec = cfg.exec_config();
    let mut t = Table::new(
        TableKind::Diagnostics,
        &[
            "dataset",
            "feature_space",
            "year",
            "attack",
            "n",
            "raw_l0",
            "projected_l0",
            "removal",
            "surrogate_asr",
        ],
    );
    for e in &entries {
        for &space in &cfg.feature_spaces {
            for year in e.dataset.years() {
                let train_cell = TrainCell {
                    dataset: e.name.clone(),
                    protocol: ProtocolKind::SameYear,
                    space,
                    train_years: vec![year],
                };
                let Ok(asm) = assemble_train(e, &train_cell, cfg.train_frac, cfg.seed)? else {
                    continue;
                };
                let (tb, tm) = crate::data::class_counts(&asm.train);
                let (hb, hm) = crate::data::class_counts(&asm.holdout);
                let (b, m) = (tb + hb, tm + hm);
                if b < cfg.min_class_count || m < cfg.min_class_count || asm.holdout.is_empty() {
                    continue;
                }
                let std = Standardizer::fit(&asm.train, &asm.schema, train_cell.fit_key())
                    .map_err(ProtocolError::from)?;
                let sur = SurrogateModel::train(&asm.train, &std, train_cell.fit_key())
                    .map_err(ProtocolError::from)?;
                let budget = EditBudget::from_dims(
                    asm.schema.d_static(),
                    asm.schema.d_dynamic(),
                    cfg.budget_fraction,
                );
                for a in &exec.attacks {
                    let batch = attack_batch(&sur, &asm.holdout, a, budget, &std, &asm.schema);
                    let summary = batch.summary();
                    let pred = |x: &[f64]| sur.prob(&std.transform(x)) > 0.5;
                    let (mut correct, mut flipped) = (0usize, 0usize);
                    for (s, adv) in asm.holdout.iter().zip(&batch.projected) {
                        let truth = s.label == Label::Malware;
                        if pred(&s.features) == truth {
                            correct += 1;
                            if pred(adv) != truth {
                                flipped += 1;
                            }
                        }
                    }
                    t.rows.push(vec![
                        e.name.clone(),
                        space.to_string(),
                        year.to_string(),
                        a.kind.as_str().into(),
                        summary.n.to_string(),
                        fmt6(summary.raw_l0_mean),
                        fmt6(summary.projected_l0_mean),
                        fmt6(summary.removal_mean),
                        cell((correct > 0).then(|| flipped as f64 / correct as f64)),
                    ]);
                }
            }
        }
    }
    Ok(t)
}
