//! Surrogate-based feature-space attacks with blockwise edit budgets and
//! projection back to the feasible domain.
//!
//! Attacks work in standardized space (dynamic coordinates z-scored, static
//! coordinates untouched). [`project`] maps a raw perturbed vector back to a
//! valid feature vector: static values in {0,1}, dynamic values non-negative
//! integers within one count of the original, and at most `k` edited
//! coordinates per block.

use std::fmt;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Block, FeatureSchema, Label, Sample};
use crate::models::SurrogateModel;
use crate::preprocess::Standardizer;
use crate::seed;

/// Changes at or below this magnitude count as "unchanged".
pub const CHANGE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackKind {
    Fgsm,
    Spsa,
}

impl AttackKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AttackKind::Fgsm => "fgsm",
            AttackKind::Spsa => "spsa",
        }
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackScope {
    AllTest,
    MalwareOnly,
}

fn d_eps_static() -> f64 {
    0.55
}
fn d_eps_dynamic() -> f64 {
    0.20
}
fn d_delta() -> f64 {
    0.01
}
fn d_steps() -> usize {
    50
}
fn d_restarts() -> usize {
    3
}
fn d_step_size() -> f64 {
    0.01
}
fn d_scope() -> AttackScope {
    AttackScope::AllTest
}
fn d_seed() -> u64 {
    seed::DEFAULT_SEED
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    pub kind: AttackKind,
    #[serde(default = "d_eps_static")]
    pub eps_static: f64,
    #[serde(default = "d_eps_dynamic")]
    pub eps_dynamic: f64,
    #[serde(default = "d_delta")]
    pub spsa_delta: f64,
    #[serde(default = "d_steps")]
    pub spsa_steps: usize,
    #[serde(default = "d_restarts")]
    pub spsa_restarts: usize,
    /// Ascent step applied to each SPSA gradient estimate.
    #[serde(default = "d_step_size")]
    pub spsa_step_size: f64,
    /// Clip every SPSA iterate to the continuous feasible box.
    #[serde(default)]
    pub spsa_project_iterates: bool,
    #[serde(default = "d_scope")]
    pub scope: AttackScope,
    #[serde(default = "d_seed")]
    pub seed: u64,
}

impl AttackConfig {
    pub fn new(kind: AttackKind) -> Self {
        Self {
            kind,
            eps_static: d_eps_static(),
            eps_dynamic: d_eps_dynamic(),
            spsa_delta: d_delta(),
            spsa_steps: d_steps(),
            spsa_restarts: d_restarts(),
            spsa_step_size: d_step_size(),
            spsa_project_iterates: false,
            scope: d_scope(),
            seed: d_seed(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.eps_static > 0.0 && self.eps_dynamic > 0.0) {
            return Err("attack epsilons must be positive".into());
        }
        if self.spsa_steps == 0 || self.spsa_restarts == 0 {
            return Err("spsa_steps and spsa_restarts must be at least 1".into());
        }
        if !(self.spsa_delta > 0.0 && self.spsa_step_size > 0.0) {
            return Err("spsa_delta and spsa_step_size must be positive".into());
        }
        Ok(())
    }

    pub fn eps(&self, block: Block) -> f64 {
        match block {
            Block::Static => self.eps_static,
            Block::Dynamic => self.eps_dynamic,
        }
    }
}

/// Maximum number of edited coordinates per block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditBudget {
    pub k_static: usize,
    pub k_dynamic: usize,
}

impl EditBudget {
    /// `ceil(fraction * d_block)` per block.
    pub fn from_dims(d_static: usize, d_dynamic: usize, fraction: f64) -> Self {
        let k = |d: usize| (fraction * d as f64 - 1e-9).ceil().max(0.0) as usize;
        Self {
            k_static: k(d_static),
            k_dynamic: k(d_dynamic),
        }
    }

    /// The 5% budget.
    pub fn for_schema(schema: &FeatureSchema) -> Self {
        Self::from_dims(schema.d_static(), schema.d_dynamic(), 0.05)
    }

    pub fn k(&self, block: Block) -> usize {
        match block {
            Block::Static => self.k_static,
            Block::Dynamic => self.k_dynamic,
        }
    }
}

/// Per-block top-k selection by `|score|`, ties to the lower index.
/// Coordinates with zero score are never selected.
pub fn top_k_mask(score: &[f64], schema: &FeatureSchema, budget: EditBudget) -> Vec<bool> {
    let mut mask = vec![false; score.len()];
    for block in [Block::Static, Block::Dynamic] {
        let mut idx: Vec<usize> = schema
            .indices_of(block)
            .into_iter()
            .filter(|&i| score[i] != 0.0)
            .collect();
        idx.sort_by(|&a, &b| score[b].abs().total_cmp(&score[a].abs()).then(a.cmp(&b)));
        for &i in idx.iter().take(budget.k(block)) {
            mask[i] = true;
        }
    }
    mask
}

fn signed_step(
    z: &[f64],
    direction: &[f64],
    schema: &FeatureSchema,
    budget: EditBudget,
    cfg: &AttackConfig,
) -> Vec<f64> {
    let mask = top_k_mask(direction, schema, budget);
    z.iter()
        .enumerate()
        .map(|(i, &v)| {
            if mask[i] {
                v + cfg.eps(schema.block_of(i)) * direction[i].signum()
            } else {
                v
            }
        })
        .collect()
}

/// Optional in-place clamp applied to SPSA iterates.
pub type Clip<'a> = Option<&'a dyn Fn(&mut [f64])>;

/// Per-sample attack output: original, raw, projected, diagnostics, attacked.
type Row = (Vec<f64>, Vec<f64>, Vec<f64>, DiagRecord, bool);

/// One signed gradient step of size `eps_block` on the top-k coordinates of
/// each block. `z` is in standardized space.
pub fn fgsm_raw(
    m: &SurrogateModel,
    z: &[f64],
    y: Label,
    cfg: &AttackConfig,
    budget: EditBudget,
    schema: &FeatureSchema,
) -> Vec<f64> {
    let (_, grad) = m.loss_grad(z, y.as_f64());
    signed_step(z, &grad, schema, budget, cfg)
}

/// Gradient ascent on `f` driven by two-sided simultaneous-perturbation
/// estimates `[f(x + δΔ) − f(x − δΔ)] / (2 δ Δ_i)` with Rademacher `Δ`.
/// `clip`, when given, is applied to every iterate. Returns the last iterate.
pub fn spsa_ascend<F, R>(
    f: F,
    x0: &[f64],
    steps: usize,
    delta: f64,
    step_size: f64,
    rng: &mut R,
    clip: Clip<'_>,
) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
    R: Rng,
{
    let d = x0.len();
    let mut x = x0.to_vec();
    let mut plus = vec![0.0; d];
    let mut minus = vec![0.0; d];
    let mut pert = vec![0.0; d];
    for _ in 0..steps {
        for p in pert.iter_mut() {
            *p = if rng.random::<bool>() { 1.0 } else { -1.0 };
        }
        for i in 0..d {
            plus[i] = x[i] + delta * pert[i];
            minus[i] = x[i] - delta * pert[i];
        }
        let diff = f(&plus) - f(&minus);
        for i in 0..d {
            x[i] += step_size * diff / (2.0 * delta * pert[i]);
        }
        if let Some(clip) = clip {
            clip(&mut x);
        }
    }
    x
}

/// Continuous feasible box around `original` in standardized space.
pub fn feasible_box(
    original: &[f64],
    std: &Standardizer,
    schema: &FeatureSchema,
) -> Vec<(f64, f64)> {
    let base = std.transform(original);
    (0..original.len())
        .map(|i| match schema.block_of(i) {
            Block::Static => (0.0, 1.0),
            Block::Dynamic => {
                let s = std.scale_of(i);
                let lo = (original[i] - 1.0).max(0.0);
                let hi = original[i] + 1.0;
                (
                    base[i] + (lo - original[i]) / s,
                    base[i] + (hi - original[i]) / s,
                )
            }
        })
        .collect()
}

/// SPSA on the surrogate loss. Each restart accumulates an ascent direction
/// over `spsa_steps` iterations, then takes one signed ε-step on the
/// blockwise top-k coordinates of that direction. The candidate with the
/// highest surrogate loss wins; ties go to the earlier restart.
#[allow(clippy::too_many_arguments)]
pub fn spsa_raw(
    m: &SurrogateModel,
    z: &[f64],
    y: Label,
    cfg: &AttackConfig,
    budget: EditBudget,
    schema: &FeatureSchema,
    seed: u64,
    bounds: Option<&[(f64, f64)]>,
) -> Vec<f64> {
    let yf = y.as_f64();
    let loss = |v: &[f64]| m.loss(v, yf);
    let clip = |v: &mut [f64]| {
        if let Some(b) = bounds {
            for (x, (lo, hi)) in v.iter_mut().zip(b) {
                *x = x.clamp(*lo, *hi);
            }
        }
    };
    let clip_ref: Clip<'_> = if cfg.spsa_project_iterates && bounds.is_some() {
        Some(&clip)
    } else {
        None
    };
    let mut best: Option<(f64, Vec<f64>)> = None;
    for r in 0..cfg.spsa_restarts {
        let mut rng = seed::rng_for(seed, &["spsa-restart", &r.to_string()]);
        let end = spsa_ascend(
            loss,
            z,
            cfg.spsa_steps,
            cfg.spsa_delta,
            cfg.spsa_step_size,
            &mut rng,
            clip_ref,
        );
        let direction: Vec<f64> = end.iter().zip(z).map(|(a, b)| a - b).collect();
        let candidate = signed_step(z, &direction, schema, budget, cfg);
        let l = loss(&candidate);
        if best.as_ref().is_none_or(|(bl, _)| l > *bl) {
            best = Some((l, candidate));
        }
    }
    best.map(|(_, c)| c).unwrap_or_else(|| z.to_vec())
}

/// Map a raw standardized-space vector to a valid feature vector.
pub fn project(
    raw: &[f64],
    original: &[f64],
    std: &Standardizer,
    schema: &FeatureSchema,
    budget: EditBudget,
) -> Vec<f64> {
    let base = std.transform(original);
    let mut out = original.to_vec();
    let mut change = vec![0.0; raw.len()];
    for i in 0..raw.len() {
        change[i] = raw[i] - base[i];
        if change[i].abs() <= CHANGE_TOL {
            continue;
        }
        out[i] = match schema.block_of(i) {
            Block::Static => {
                if raw[i] >= 0.5 {
                    1.0
                } else {
                    0.0
                }
            }
            Block::Dynamic => {
                let v = std.invert_coord(i, raw[i]).round().max(0.0);
                v.clamp(original[i] - 1.0, original[i] + 1.0).max(0.0)
            }
        };
    }
    for block in [Block::Static, Block::Dynamic] {
        let mut edited: Vec<usize> = schema
            .indices_of(block)
            .into_iter()
            .filter(|&i| out[i] != original[i])
            .collect();
        let k = budget.k(block);
        if edited.len() > k {
            edited.sort_by(|&a, &b| change[b].abs().total_cmp(&change[a].abs()).then(a.cmp(&b)));
            for &i in &edited[k..] {
                out[i] = original[i];
            }
        }
    }
    out
}

/// Perturbation size before and after projection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagRecord {
    pub raw_l0: usize,
    pub projected_l0: usize,
    /// Share of raw-changed coordinates left unchanged after projection.
    pub removal: f64,
}

pub fn diagnose(
    original: &[f64],
    raw: &[f64],
    projected: &[f64],
    std: &Standardizer,
    _schema: &FeatureSchema,
) -> DiagRecord {
    let base = std.transform(original);
    let mut raw_l0 = 0;
    let mut projected_l0 = 0;
    let mut removed = 0;
    for i in 0..original.len() {
        let raw_changed = (raw[i] - base[i]).abs() > CHANGE_TOL;
        let proj_changed = projected[i] != original[i];
        raw_l0 += usize::from(raw_changed);
        projected_l0 += usize::from(proj_changed);
        removed += usize::from(raw_changed && !proj_changed);
    }
    DiagRecord {
        raw_l0,
        projected_l0,
        removal: if raw_l0 == 0 {
            0.0
        } else {
            removed as f64 / raw_l0 as f64
        },
    }
}

/// Attack output for a test set, aligned with the input order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdversarialBatch {
    pub originals: Vec<Vec<f64>>,
    pub raw_perturbed: Vec<Vec<f64>>,
    pub projected: Vec<Vec<f64>>,
    pub per_sample: Vec<DiagRecord>,
    /// Whether the sample was within the attack scope.
    pub attacked: Vec<bool>,
}

/// Means of the per-sample diagnostics over attacked samples.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DiagSummary {
    pub raw_l0_mean: f64,
    pub projected_l0_mean: f64,
    pub removal_mean: f64,
    pub n: usize,
}

impl AdversarialBatch {
    pub fn len(&self) -> usize {
        self.originals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.originals.is_empty()
    }

    pub fn summary(&self) -> DiagSummary {
        let rows: Vec<&DiagRecord> = self
            .per_sample
            .iter()
            .zip(&self.attacked)
            .filter(|(_, a)| **a)
            .map(|(d, _)| d)
            .collect();
        let n = rows.len();
        if n == 0 {
            return DiagSummary::default();
        }
        let nf = n as f64;
        DiagSummary {
            raw_l0_mean: rows.iter().map(|d| d.raw_l0 as f64).sum::<f64>() / nf,
            projected_l0_mean: rows.iter().map(|d| d.projected_l0 as f64).sum::<f64>() / nf,
            removal_mean: rows.iter().map(|d| d.removal).sum::<f64>() / nf,
            n,
        }
    }
}

/// Attack every in-scope sample of `test`; out-of-scope samples pass through.
pub fn attack_batch(
    m: &SurrogateModel,
    test: &[Sample],
    cfg: &AttackConfig,
    budget: EditBudget,
    std: &Standardizer,
    schema: &FeatureSchema,
) -> AdversarialBatch {
    let rows: Vec<Row> = test
        .par_iter()
        .map(|s| {
            let original = s.features.clone();
            let z = std.transform(&original);
            let in_scope = match cfg.scope {
                AttackScope::AllTest => true,
                AttackScope::MalwareOnly => s.label == Label::Malware,
            };
            if !in_scope {
                let diag = DiagRecord {
                    raw_l0: 0,
                    projected_l0: 0,
                    removal: 0.0,
                };
                return (original.clone(), z, original, diag, false);
            }
            let raw = match cfg.kind {
                AttackKind::Fgsm => fgsm_raw(m, &z, s.label, cfg, budget, schema),
                AttackKind::Spsa => {
                    let sample_seed = seed::derive_seed(cfg.seed, &["spsa-sample", &s.id]);
                    let bounds = cfg
                        .spsa_project_iterates
                        .then(|| feasible_box(&original, std, schema));
                    spsa_raw(
                        m,
                        &z,
                        s.label,
                        cfg,
                        budget,
                        schema,
                        sample_seed,
                        bounds.as_deref(),
                    )
                }
            };
            let projected = project(&raw, &original, std, schema, budget);
            let diag = diagnose(&original, &raw, &projected, std, schema);
            (original, raw, projected, diag, true)
        })
        .collect();
    let mut batch = AdversarialBatch {
        originals: Vec::with_capacity(rows.len()),
        raw_perturbed: Vec::with_capacity(rows.len()),
        projected: Vec::with_capacity(rows.len()),
        per_sample: Vec::with_capacity(rows.len()),
        attacked: Vec::with_capacity(rows.len()),
    };
    for (o, r, p, d, a) in rows {
        batch.originals.push(o);
        batch.raw_perturbed.push(r);
        batch.projected.push(p);
        batch.per_sample.push(d);
        batch.attacked.push(a);
    }
    batch
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Source;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn static_schema(d: usize) -> FeatureSchema {
        FeatureSchema::synthetic(d, 0)
    }

    fn hand_model() -> SurrogateModel {
        SurrogateModel::from_parts(vec![1.0, -1.0], 0.0, "hand")
    }

    fn budget(k_static: usize, k_dynamic: usize) -> EditBudget {
        EditBudget {
            k_static,
            k_dynamic,
        }
    }

    #[test]
    fn budget_arithmetic() {
        let b = EditBudget::from_dims(166, 288, 0.05);
        assert_eq!((b.k_static, b.k_dynamic), (9, 15));
        let b = EditBudget::from_dims(20, 1, 0.05);
        assert_eq!((b.k_static, b.k_dynamic), (1, 1));
        assert_eq!(EditBudget::from_dims(0, 40, 0.05).k_static, 0);
    }

    #[test]
    fn fgsm_hand_example() {
        let cfg = AttackConfig::new(AttackKind::Fgsm);
        let raw = fgsm_raw(
            &hand_model(),
            &[0.0, 0.0],
            Label::Malware,
            &cfg,
            budget(2, 0),
            &static_schema(2),
        );
        assert_eq!(raw, vec![-0.55, 0.55]);
    }

    #[test]
    fn fgsm_zero_weights_is_identity() {
        let m = SurrogateModel::from_parts(vec![0.0; 3], 0.3, "zero");
        let cfg = AttackConfig::new(AttackKind::Fgsm);
        let z = [1.0, 0.0, 1.0];
        assert_eq!(
            fgsm_raw(&m, &z, Label::Benign, &cfg, budget(3, 0), &static_schema(3)),
            z.to_vec()
        );
    }

    #[test]
    fn fgsm_top_one() {
        // (sigmoid(0) - 1) * w = (0.9, 0.5) when w = (-1.8, -1.0).
        let m = SurrogateModel::from_parts(vec![-1.8, -1.0], 0.0, "k1");
        let cfg = AttackConfig::new(AttackKind::Fgsm);
        let raw = fgsm_raw(
            &m,
            &[0.0, 0.0],
            Label::Malware,
            &cfg,
            budget(1, 0),
            &static_schema(2),
        );
        assert_eq!(raw, vec![0.55, 0.0]);
    }

    #[test]
    fn top_k_ties_prefer_lower_index() {
        let schema = static_schema(4);
        let mask = top_k_mask(&[0.5, -0.5, 0.5, 0.1], &schema, budget(2, 0));
        assert_eq!(mask, vec![true, true, false, false]);
    }

    #[test]
    fn projection_hand_example() {
        let schema = static_schema(2);
        let std = Standardizer::identity("s");
        let p = project(&[-0.55, 0.55], &[0.0, 0.0], &std, &schema, budget(2, 0));
        assert_eq!(p, vec![0.0, 1.0]);
        let d = diagnose(&[0.0, 0.0], &[-0.55, 0.55], &p, &std, &schema);
        assert_eq!(
            d,
            DiagRecord {
                raw_l0: 2,
                projected_l0: 1,
                removal: 0.5
            }
        );
    }

    #[test]
    fn null_perturbation_diagnostics() {
        let schema = static_schema(2);
        let std = Standardizer::identity("s");
        let x = [1.0, 0.0];
        let p = project(&x, &x, &std, &schema, budget(2, 0));
        assert_eq!(p, x.to_vec());
        assert_eq!(
            diagnose(&x, &x, &p, &std, &schema),
            DiagRecord {
                raw_l0: 0,
                projected_l0: 0,
                removal: 0.0
            }
        );
    }

    #[test]
    fn surviving_changes_have_zero_removal() {
        // Every coordinate is pushed across the rounding threshold.
        let schema = static_schema(3);
        let std = Standardizer::identity("s");
        let original = [0.0, 1.0, 0.0];
        let raw = [0.55, 0.45, 0.55];
        let p = project(&raw, &original, &std, &schema, budget(3, 0));
        assert_eq!(p, vec![1.0, 0.0, 1.0]);
        assert_eq!(diagnose(&original, &raw, &p, &std, &schema).removal, 0.0);
    }

    fn dyn_sample(id: &str, v: f64) -> Sample {
        Sample {
            id: id.into(),
            year: 2010,
            label: Label::Benign,
            source: Source::Emulator,
            features: vec![v],
        }
    }

    #[test]
    fn dynamic_cap_plus_one() {
        let schema = FeatureSchema::synthetic(0, 1);
        let train = [dyn_sample("a", 3.0), dyn_sample("b", 7.0)];
        let std = Standardizer::fit(&train, &schema, "t").unwrap();
        let raw = std.transform(&[9.0]);
        assert_eq!(
            project(&raw, &[5.0], &std, &schema, budget(0, 1)),
            vec![6.0]
        );
        let raw = std.transform(&[-4.0]);
        assert_eq!(
            project(&raw, &[0.0], &std, &schema, budget(0, 1)),
            vec![0.0]
        );
    }

    #[test]
    fn budget_keeps_largest_raw_changes() {
        let schema = static_schema(4);
        let std = Standardizer::identity("s");
        let raw = [0.6, 0.9, 0.7, 0.9];
        let p = project(&raw, &[0.0; 4], &std, &schema, budget(2, 0));
        assert_eq!(p, vec![0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn spsa_flat_loss_is_identity() {
        let m = SurrogateModel::from_parts(vec![0.0; 4], 0.0, "flat");
        let cfg = AttackConfig::new(AttackKind::Spsa);
        let z = [0.0, 1.0, 0.0, 1.0];
        let out = spsa_raw(
            &m,
            &z,
            Label::Malware,
            &cfg,
            budget(2, 0),
            &static_schema(4),
            9,
            None,
        );
        assert_eq!(out, z.to_vec());
    }

    #[test]
    fn spsa_matches_analytic_ascent_on_quadratic() {
        let f = |x: &[f64]| -(x[0] - 3.0).powi(2);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let spsa = spsa_ascend(f, &[0.0], 50, 0.01, 0.1, &mut rng, None);
        // Same loop with the analytic gradient -2(x - 3).
        let mut x = 0.0;
        for _ in 0..50 {
            x += 0.1 * (-2.0 * (x - 3.0));
        }
        assert!((spsa[0] - 3.0).abs() < 0.5);
        assert!((spsa[0] - x).abs() < 1e-6);
    }

    #[test]
    fn spsa_deterministic() {
        let m = SurrogateModel::from_parts(vec![0.4, -0.2, 0.9, 0.1], 0.1, "d");
        let cfg = AttackConfig::new(AttackKind::Spsa);
        let schema = static_schema(4);
        let a = spsa_raw(
            &m,
            &[0.0, 1.0, 0.0, 0.0],
            Label::Malware,
            &cfg,
            budget(2, 0),
            &schema,
            11,
            None,
        );
        let b = spsa_raw(
            &m,
            &[0.0, 1.0, 0.0, 0.0],
            Label::Malware,
            &cfg,
            budget(2, 0),
            &schema,
            11,
            None,
        );
        assert_eq!(a, b);
    }

    #[test]
    fn spsa_clipped_iterates_stay_in_box() {
        let f = |x: &[f64]| x[0] + x[1];
        let clip = |v: &mut [f64]| {
            for x in v.iter_mut() {
                *x = x.clamp(0.0, 1.0);
            }
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let out = spsa_ascend(f, &[0.5, 0.5], 30, 0.01, 0.5, &mut rng, Some(&clip));
        assert!(out.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn malware_only_scope_passes_benign_through() {
        let schema = static_schema(2);
        let std = Standardizer::identity("s");
        let mut cfg = AttackConfig::new(AttackKind::Fgsm);
        cfg.scope = AttackScope::MalwareOnly;
        let test = vec![
            Sample {
                id: "a".into(),
                year: 2010,
                label: Label::Benign,
                source: Source::Emulator,
                features: vec![0.0, 0.0],
            },
            Sample {
                id: "b".into(),
                year: 2010,
                label: Label::Malware,
                source: Source::Emulator,
                features: vec![0.0, 0.0],
            },
        ];
        let batch = attack_batch(&hand_model(), &test, &cfg, budget(2, 0), &std, &schema);
        assert_eq!(batch.projected[0], test[0].features);
        assert_eq!(batch.projected[1], vec![0.0, 1.0]);
        assert_eq!(batch.attacked, vec![false, true]);
        assert_eq!(batch.summary().n, 1);
    }

    #[test]
    fn config_defaults_from_json() {
        let cfg: AttackConfig = serde_json::from_str(r#"{"kind":"spsa"}"#).unwrap();
        assert_eq!(cfg, AttackConfig::new(AttackKind::Spsa));
        assert!(serde_json::from_str::<AttackConfig>(r#"{"kind":"pgd"}"#).is_err());
    }
}
