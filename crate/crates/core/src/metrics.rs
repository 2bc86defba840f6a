//! Clean and adversarial metrics, drift linkage, and the rank statistics
//! used to relate temporal gap to robustness loss.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::data::Label;
use crate::seed;

/// Added to the baseline ASR in the amplification factor denominator.
pub const AAF_GUARD: f64 = 1e-3;
/// Baseline ASR below which AAF is not displayed.
pub const AAF_DISPLAY_MIN_BASELINE_ASR: f64 = 0.01;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("metrics need at least one prediction")]
    Empty,
    #[error("misaligned inputs: {0} predictions vs {1} labels")]
    Misaligned(usize, usize),
    #[error("baseline provenance mismatch: {0}")]
    Provenance(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CleanMetrics {
    pub accuracy: f64,
    /// Malware is the positive class.
    pub precision: f64,
    pub recall: f64,
    pub macro_f1: f64,
}

fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

pub fn clean_metrics(preds: &[Label], labels: &[Label]) -> Result<CleanMetrics, MetricsError> {
    if preds.len() != labels.len() {
        return Err(MetricsError::Misaligned(preds.len(), labels.len()));
    }
    if preds.is_empty() {
        return Err(MetricsError::Empty);
    }
    let (mut tp, mut tn, mut fp, mut fn_) = (0, 0, 0, 0);
    for (p, y) in preds.iter().zip(labels) {
        match (p, y) {
            (Label::Malware, Label::Malware) => tp += 1,
            (Label::Benign, Label::Benign) => tn += 1,
            (Label::Malware, Label::Benign) => fp += 1,
            (Label::Benign, Label::Malware) => fn_ += 1,
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok(CleanMetrics {
        accuracy: (tp + tn) as f64 / preds.len() as f64,
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fn_),
        // Benign F1 swaps the roles of false positives and false negatives.
        macro_f1: 0.5 * (f1(tp, fp, fn_) + f1(tn, fn_, fp)),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdversarialMetrics {
    pub aa: f64,
    /// 0 when no sample was correct before the attack; see `asr_defined`.
    pub asr: f64,
    pub asr_defined: bool,
    /// Originally wrong samples that the perturbation made correct.
    pub corrected: usize,
}

pub fn adversarial_metrics(
    clean_preds: &[Label],
    adv_preds: &[Label],
    labels: &[Label],
) -> Result<AdversarialMetrics, MetricsError> {
    if clean_preds.len() != labels.len() || adv_preds.len() != labels.len() {
        return Err(MetricsError::Misaligned(adv_preds.len(), labels.len()));
    }
    if labels.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut adv_correct = 0;
    let mut clean_correct = 0;
    let mut flipped = 0;
    let mut corrected = 0;
    for ((c, a), y) in clean_preds.iter().zip(adv_preds).zip(labels) {
        adv_correct += usize::from(a == y);
        clean_correct += usize::from(c == y);
        flipped += usize::from(c == y && a != y);
        corrected += usize::from(c != y && a == y);
    }
    Ok(AdversarialMetrics {
        aa: adv_correct as f64 / labels.len() as f64,
        asr: if clean_correct == 0 {
            0.0
        } else {
            flipped as f64 / clean_correct as f64
        },
        asr_defined: clean_correct > 0,
        corrected,
    })
}

/// Clean and adversarial metrics of one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub macro_f1: f64,
    pub aa: f64,
    pub asr: f64,
    pub asr_defined: bool,
    pub corrected: usize,
    pub n: usize,
}

impl MetricsRecord {
    pub fn new(clean: CleanMetrics, adv: AdversarialMetrics, n: usize) -> Self {
        Self {
            accuracy: clean.accuracy,
            precision: clean.precision,
            recall: clean.recall,
            macro_f1: clean.macro_f1,
            aa: adv.aa,
            asr: adv.asr,
            asr_defined: adv.asr_defined,
            corrected: adv.corrected,
            n,
        }
    }

    /// Record for predictions with no attack applied.
    pub fn from_predictions(
        clean_preds: &[Label],
        adv_preds: &[Label],
        labels: &[Label],
    ) -> Result<Self, MetricsError> {
        Ok(Self::new(
            clean_metrics(clean_preds, labels)?,
            adversarial_metrics(clean_preds, adv_preds, labels)?,
            labels.len(),
        ))
    }

    /// `aa == acc (1 - asr) + corrected / n`, with integer arithmetic on the
    /// counts so the check is exact.
    pub fn identity_holds(&self) -> bool {
        let n = self.n as f64;
        let clean_correct = (self.accuracy * n).round();
        let flipped = (self.asr * clean_correct).round();
        let adv_correct = (self.aa * n).round();
        adv_correct == clean_correct - flipped + self.corrected as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkageRecord {
    pub robust_drop: f64,
    pub delta_asr: f64,
    pub aaf: f64,
}

impl LinkageRecord {
    /// AAF for display: suppressed when the baseline ASR is negligible.
    pub fn aaf_display(&self, baseline_asr: f64) -> Option<f64> {
        (baseline_asr >= AAF_DISPLAY_MIN_BASELINE_ASR).then_some(self.aaf)
    }
}

/// Contrast `current` against its same-cell baseline. `baseline_cell` and
/// `current_cell` identify the (train spec, model, space, attack) cell each
/// record came from and must agree.
pub fn linkage(
    baseline_cell: &str,
    baseline: &MetricsRecord,
    current_cell: &str,
    current: &MetricsRecord,
) -> Result<LinkageRecord, MetricsError> {
    if baseline_cell != current_cell {
        return Err(MetricsError::Provenance(format!(
            "baseline from `{baseline_cell}`, run from `{current_cell}`"
        )));
    }
    Ok(LinkageRecord {
        robust_drop: baseline.aa - current.aa,
        delta_asr: current.asr - baseline.asr,
        aaf: current.asr / (baseline.asr + AAF_GUARD),
    })
}

/// Average ranks (1-based), ties sharing the mean of their positions.
pub fn mid_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman rank correlation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpearmanResult {
    /// `None` when either input is constant.
    pub rho: Option<f64>,
    /// Two-sided; `None` when rho is undefined or n < 4.
    pub p_value: Option<f64>,
    pub n: usize,
}

/// Spearman rho from the Pearson correlation of mid-ranks, with a two-sided
/// Student-t p-value on n − 2 degrees of freedom.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<SpearmanResult, MetricsError> {
    if xs.len() != ys.len() {
        return Err(MetricsError::Misaligned(xs.len(), ys.len()));
    }
    let n = xs.len();
    if n < 2 {
        return Ok(SpearmanResult {
            rho: None,
            p_value: None,
            n,
        });
    }
    let rho = pearson(&mid_ranks(xs), &mid_ranks(ys));
    let p_value = match rho {
        Some(r) if n >= 4 => Some(t_test_p(r, n)),
        _ => None,
    };
    Ok(SpearmanResult { rho, p_value, n })
}

fn t_test_p(rho: f64, n: usize) -> f64 {
    let df = (n - 2) as f64;
    let denom = 1.0 - rho * rho;
    if denom <= 0.0 {
        return 0.0;
    }
    let t = rho * (df / denom).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("df positive");
    (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0)
}

/// Exact two-sided permutation p-value for n ≤ 8: the share of all
/// permutations of `ys` whose |rho| reaches the observed |rho|.
pub fn spearman_exact_p(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len();
    if n != ys.len() || !(2..=8).contains(&n) {
        return None;
    }
    let rx = mid_ranks(xs);
    let ry = mid_ranks(ys);
    let observed = pearson(&rx, &ry)?.abs();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut hits = 0usize;
    let mut total = 0usize;
    let mut buf = vec![0.0; n];
    loop {
        for (b, &k) in buf.iter_mut().zip(&perm) {
            *b = ry[k];
        }
        if let Some(r) = pearson(&rx, &buf) {
            if r.abs() >= observed - 1e-12 {
                hits += 1;
            }
        }
        total += 1;
        if !next_permutation(&mut perm) {
            break;
        }
    }
    Some(hits as f64 / total as f64)
}

fn next_permutation(p: &mut [usize]) -> bool {
    let n = p.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

/// Lower median (the ⌊(n−1)/2⌋-th order statistic). `None` when empty.
pub fn lower_median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(v[(v.len() - 1) / 2])
}

/// Linear-interpolated percentile of sorted data, `q` in [0, 100].
fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Percentile-bootstrap 95% interval for the median.
pub fn bootstrap_median_ci(values: &[f64], b: usize, seed: u64) -> Option<(f64, f64)> {
    if values.is_empty() || b == 0 {
        return None;
    }
    let mut rng = seed::rng_for(seed, &["bootstrap-median"]);
    let n = values.len();
    let mut sorted_input = values.to_vec();
    sorted_input.sort_by(f64::total_cmp);
    let mut medians = Vec::with_capacity(b);
    let mut draw = vec![0.0; n];
    for _ in 0..b {
        for d in draw.iter_mut() {
            *d = sorted_input[rng.random_range(0..n)];
        }
        medians.push(lower_median(&draw).expect("non-empty"));
    }
    medians.sort_by(f64::total_cmp);
    Some((
        percentile_sorted(&medians, 2.5),
        percentile_sorted(&medians, 97.5),
    ))
}

/// Rank association plus a bootstrap interval for the median of `ys`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatSummary {
    pub spearman_rho: Option<f64>,
    pub p_value: Option<f64>,
    pub median: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub n_pairs: usize,
}

pub fn summarize(xs: &[f64], ys: &[f64], b: usize, seed: u64) -> Result<StatSummary, MetricsError> {
    let s = spearman(xs, ys)?;
    let ci = bootstrap_median_ci(ys, b, seed);
    Ok(StatSummary {
        spearman_rho: s.rho,
        p_value: s.p_value,
        median: lower_median(ys),
        ci_low: ci.map(|c| c.0),
        ci_high: ci.map(|c| c.1),
        n_pairs: s.n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use Label::{Benign as B, Malware as M};

    #[test]
    fn perfect_classifier() {
        let y = [M, B, M, B];
        let m = clean_metrics(&y, &y).unwrap();
        assert_eq!(
            (m.accuracy, m.precision, m.recall, m.macro_f1),
            (1.0, 1.0, 1.0, 1.0)
        );
    }

    #[test]
    fn all_benign_predictions() {
        // Benign F1 = 2*2/(2*2+0+2) = 2/3; malware F1 = 0.
        let m = clean_metrics(&[B, B, B, B], &[M, M, B, B]).unwrap();
        assert_eq!(m.accuracy, 0.5);
        assert!((m.macro_f1 - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(m.precision, 0.0);
    }

    #[test]
    fn single_class_labels_use_zero_f1() {
        let m = clean_metrics(&[B, B], &[B, B]).unwrap();
        assert_eq!(m.macro_f1, 0.5);
        assert_eq!(m.recall, 0.0);
    }

    #[test]
    fn empty_is_error() {
        assert_eq!(clean_metrics(&[], &[]), Err(MetricsError::Empty));
    }

    #[test]
    fn null_attack() {
        let clean = [M, B, B, M];
        let y = [M, B, M, M];
        let a = adversarial_metrics(&clean, &clean, &y).unwrap();
        assert_eq!(a.asr, 0.0);
        assert_eq!(a.aa, clean_metrics(&clean, &y).unwrap().accuracy);
    }

    #[test]
    fn four_sample_example() {
        // Samples 1-3 correct, sample 4 wrong; the attack flips 2 and fixes 4.
        let y = [M, M, B, B];
        let clean = [M, M, B, M];
        let adv = [M, B, B, B];
        let a = adversarial_metrics(&clean, &adv, &y).unwrap();
        assert_eq!(a.aa, 0.75);
        assert!((a.asr - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(a.corrected, 1);
        let rec = MetricsRecord::from_predictions(&clean, &adv, &y).unwrap();
        assert!(rec.identity_holds());
    }

    #[test]
    fn asr_undefined_when_nothing_correct() {
        let a = adversarial_metrics(&[B, B], &[M, B], &[M, M]).unwrap();
        assert!(!a.asr_defined);
        assert_eq!(a.asr, 0.0);
    }

    fn rec(aa: f64, asr: f64) -> MetricsRecord {
        MetricsRecord {
            accuracy: 0.8,
            precision: 0.8,
            recall: 0.8,
            macro_f1: 0.8,
            aa,
            asr,
            asr_defined: true,
            corrected: 0,
            n: 100,
        }
    }

    #[test]
    fn self_linkage() {
        let r = rec(0.6, 0.2);
        let l = linkage("c", &r, "c", &r).unwrap();
        assert_eq!((l.robust_drop, l.delta_asr), (0.0, 0.0));
        assert!((l.aaf - 0.2 / 0.201).abs() < 1e-15);
    }

    #[test]
    fn robust_drop_value() {
        let l = linkage("c", &rec(0.728, 0.003), "c", &rec(0.548, 0.01)).unwrap();
        assert!((l.robust_drop - 0.180).abs() < 1e-12);
    }

    #[test]
    fn aaf_guard_arithmetic() {
        let l = linkage("c", &rec(0.7, 0.0), "c", &rec(0.6, 0.05)).unwrap();
        assert!((l.aaf - 50.0).abs() < 1e-9);
        assert_eq!(l.aaf_display(0.0), None);
        assert_eq!(l.aaf_display(0.02), Some(l.aaf));
    }

    #[test]
    fn mismatched_provenance() {
        let r = rec(0.5, 0.1);
        assert!(matches!(
            linkage("a", &r, "b", &r),
            Err(MetricsError::Provenance(_))
        ));
    }

    #[test]
    fn mid_ranks_ties() {
        assert_eq!(
            mid_ranks(&[10.0, 20.0, 10.0, 5.0]),
            vec![2.5, 4.0, 2.5, 1.0]
        );
    }

    #[test]
    fn spearman_monotone_and_antitone() {
        let xs = [1.0, 4.0, 2.0, 8.0, 3.0];
        let up = spearman(&xs, &xs).unwrap();
        assert_eq!(up.rho, Some(1.0));
        assert_eq!(up.p_value, Some(0.0));
        let mut sorted = xs.to_vec();
        sorted.sort_by(f64::total_cmp);
        let rev: Vec<f64> = sorted.iter().rev().copied().collect();
        assert_eq!(spearman(&sorted, &rev).unwrap().rho, Some(-1.0));
    }

    #[test]
    fn spearman_constant_undefined() {
        let s = spearman(&[1.0, 2.0, 3.0, 4.0], &[0.5; 4]).unwrap();
        assert_eq!((s.rho, s.p_value), (None, None));
    }

    #[test]
    fn spearman_small_n_has_no_p() {
        let s = spearman(&[1.0, 2.0, 3.0], &[3.0, 1.0, 2.0]).unwrap();
        assert!(s.rho.is_some());
        assert_eq!(s.p_value, None);
    }

    #[test]
    fn t_approximation_reference_value() {
        // rho = 0.5 with n = 12: t = 0.5 * sqrt(10 / 0.75) = 1.8257;
        // two-sided p for t(10) ≈ 0.0979 (standard t tables).
        let p = t_test_p(0.5, 12);
        assert!((p - 0.0979).abs() < 5e-4, "p = {p}");
    }

    #[test]
    fn exact_p_for_perfect_order() {
        // Only the identity and the reversal reach |rho| = 1 among 5! orders.
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        let p = spearman_exact_p(&xs, &xs).unwrap();
        assert!((p - 2.0 / 120.0).abs() < 1e-15);
        assert_eq!(spearman_exact_p(&[1.0; 9], &[1.0; 9]), None);
    }

    #[test]
    fn lower_median_even() {
        assert_eq!(lower_median(&[4.0, 1.0, 3.0, 2.0]), Some(2.0));
        assert_eq!(lower_median(&[]), None);
    }

    #[test]
    fn bootstrap_constant_and_deterministic() {
        assert_eq!(bootstrap_median_ci(&[2.5; 20], 1000, 1), Some((2.5, 2.5)));
        let v: Vec<f64> = (0..30).map(|i| (i * 7 % 13) as f64).collect();
        assert_eq!(
            bootstrap_median_ci(&v, 500, 9),
            bootstrap_median_ci(&v, 500, 9)
        );
    }

    #[test]
    fn summary_interval_brackets_median() {
        let v: Vec<f64> = (0..100).map(|i| (i as f64 - 49.5).powi(3)).collect();
        let x: Vec<f64> = (0..100).map(f64::from).collect();
        let s = summarize(&x, &v, 1000, 42).unwrap();
        let m = s.median.unwrap();
        assert!(s.ci_low.unwrap() <= m && m <= s.ci_high.unwrap());
        assert_eq!(s.spearman_rho, Some(1.0));
    }
}
