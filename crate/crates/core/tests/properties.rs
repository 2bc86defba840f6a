mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use driftbench::attacks::{
    fgsm_raw, project, spsa_raw, AttackConfig, AttackKind, EditBudget, CHANGE_TOL,
};
use driftbench::data::{
    partition_by_year, stratified_split, synthesize, Block, DriftKind, FeatureSchema, Label,
    Sample, Source, SynthConfig,
};
use driftbench::metrics::{bootstrap_median_ci, linkage, lower_median, spearman, MetricsRecord};
use driftbench::models::knn::Knn;
use driftbench::models::{train_target, ModelFamily, SurrogateModel};
use driftbench::preprocess::Standardizer;

use common::sample;

fn label(b: bool) -> Label {
    if b {
        Label::Malware
    } else {
        Label::Benign
    }
}

/// Random feature vector for a `(ds, dd)` schema.
fn point(rng: &mut ChaCha8Rng, ds: usize, dd: usize) -> Vec<f64> {
    (0..ds + dd)
        .map(|i| {
            if i < ds {
                f64::from(u8::from(rng.random_bool(0.4)))
            } else {
                f64::from(rng.random_range(0u32..9))
            }
        })
        .collect()
}

fn fitted(rng: &mut ChaCha8Rng, schema: &FeatureSchema) -> Standardizer {
    let (ds, dd) = (schema.d_static(), schema.d_dynamic());
    let fit: Vec<Sample> = (0..20)
        .map(|i| sample(&format!("f{i}"), 0, Label::Benign, point(rng, ds, dd)))
        .collect();
    Standardizer::fit(&fit, schema, "fit").unwrap()
}

fn random_surrogate(rng: &mut ChaCha8Rng, d: usize) -> SurrogateModel {
    let w = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    SurrogateModel::from_parts(w, rng.random_range(-0.5..0.5), "random")
}

fn brute_rho(xs: &[f64], ys: &[f64]) -> f64 {
    let rank = |v: &[f64]| -> Vec<f64> {
        v.iter()
            .map(|&x| {
                let below = v.iter().filter(|&&u| u < x).count() as f64;
                let equal = v.iter().filter(|&&u| u == x).count() as f64;
                below + (equal + 1.0) / 2.0
            })
            .collect()
    };
    let (a, b) = (rank(xs), rank(ys));
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn synth_cfg(
    years: usize,
    n: usize,
    ds: usize,
    dd: usize,
    kind: DriftKind,
    seed: u64,
) -> SynthConfig {
    SynthConfig {
        years,
        per_year_per_class: n,
        d_static: ds,
        d_dynamic: dd,
        drift_kind: kind,
        drift_rate: 0.5,
        seed,
        start_year: 2015,
        drift_fraction: 0.3,
        class_separation: 0.5,
        source: Source::Emulator,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn projection_is_valid_contained_and_idempotent(
        seed in any::<u64>(),
        ds in 0usize..30,
        dd in 1usize..40,
        fraction in 0.01f64..0.5,
        touched in 0usize..40,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let schema = FeatureSchema::synthetic(ds, dd);
        let budget = EditBudget::from_dims(ds, dd, fraction);
        let std = fitted(&mut rng, &schema);
        let original = point(&mut rng, ds, dd);
        let base = std.transform(&original);
        let mut raw = base.clone();
        for _ in 0..touched {
            let j = rng.random_range(0..ds + dd);
            raw[j] += rng.random_range(-3.0..3.0);
        }
        let p = project(&raw, &original, &std, &schema, budget);
        let mut edits = [0usize; 2];
        for j in 0..p.len() {
            let block = schema.block_of(j);
            prop_assert!(block.admits(p[j]));
            if p[j] != original[j] {
                prop_assert!((raw[j] - base[j]).abs() > CHANGE_TOL);
                edits[usize::from(block == Block::Dynamic)] += 1;
                if block == Block::Dynamic {
                    prop_assert!((p[j] - original[j]).abs() <= 1.0);
                }
            }
        }
        prop_assert!(edits[0] <= budget.k_static && edits[1] <= budget.k_dynamic);
        prop_assert_eq!(project(&std.transform(&p), &original, &std, &schema, budget), p);
    }

    #[test]
    fn fgsm_small_step_increases_loss(seed in any::<u64>(), ds in 0usize..20, dd in 1usize..30, y in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let schema = FeatureSchema::synthetic(ds, dd);
        let m = random_surrogate(&mut rng, ds + dd);
        let z: Vec<f64> = (0..ds + dd).map(|_| rng.random_range(-2.0..2.0)).collect();
        let y = label(y);
        let (_, g) = m.loss_grad(&z, y.as_f64());
        prop_assume!(g.iter().any(|&v| v != 0.0));
        let cfg = AttackConfig {
            eps_static: 1e-3,
            eps_dynamic: 1e-3,
            ..AttackConfig::new(AttackKind::Fgsm)
        };
        let raw = fgsm_raw(&m, &z, y, &cfg, EditBudget::for_schema(&schema), &schema);
        prop_assert!(m.loss(&raw, y.as_f64()) > m.loss(&z, y.as_f64()));
    }

    #[test]
    fn spearman_matches_brute_force(
        xs in prop::collection::vec(0u8..6, 2..40),
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs: Vec<f64> = xs.into_iter().map(f64::from).collect();
        let ys: Vec<f64> = xs.iter().map(|_| f64::from(rng.random_range(0u8..5))).collect();
        let s = spearman(&xs, &ys).unwrap();
        let constant = |v: &[f64]| v.iter().all(|&x| x == v[0]);
        if constant(&xs) || constant(&ys) {
            prop_assert!(s.rho.is_none());
        } else {
            prop_assert!((s.rho.unwrap() - brute_rho(&xs, &ys)).abs() < 1e-12);
        }
    }

    #[test]
    fn spearman_invariant_under_monotone_maps(
        pairs in prop::collection::vec((-50i32..50, -50i32..50), 4..40),
    ) {
        let xs: Vec<f64> = pairs.iter().map(|p| f64::from(p.0)).collect();
        let ys: Vec<f64> = pairs.iter().map(|p| f64::from(p.1)).collect();
        let base = spearman(&xs, &ys).unwrap();
        let cubed: Vec<f64> = xs.iter().map(|x| x.powi(3) + 7.0).collect();
        let squashed: Vec<f64> = ys.iter().map(|y| (y / 10.0).tanh()).collect();
        let mapped = spearman(&cubed, &squashed).unwrap();
        match (base.rho, mapped.rho) {
            (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-12),
            (None, None) => {}
            other => prop_assert!(false, "definedness changed: {:?}", other),
        }
    }

    #[test]
    fn adversarial_accuracy_bounds(triples in prop::collection::vec((any::<bool>(), any::<bool>(), any::<bool>()), 1..64)) {
        let labels: Vec<Label> = triples.iter().map(|t| label(t.0)).collect();
        let clean: Vec<Label> = triples.iter().map(|t| label(t.1)).collect();
        let adv: Vec<Label> = triples.iter().map(|t| label(t.2)).collect();
        let r = MetricsRecord::from_predictions(&clean, &adv, &labels).unwrap();
        let lo = r.accuracy * (1.0 - r.asr);
        prop_assert!(r.identity_holds());
        prop_assert!(lo - 1e-12 <= r.aa && r.aa <= lo + (1.0 - r.accuracy) + 1e-12);
        let own = linkage("cell", &r, "cell", &r).unwrap();
        prop_assert_eq!(own.robust_drop, 0.0);
        prop_assert_eq!(own.delta_asr, 0.0);
    }

    #[test]
    fn bootstrap_interval_is_ordered_within_range(values in prop::collection::vec(-100.0f64..100.0, 1..60), seed in any::<u64>()) {
        let (lo, hi) = bootstrap_median_ci(&values, 200, seed).unwrap();
        prop_assert!(lo <= hi);
        prop_assert!(lo >= values.iter().cloned().fold(f64::INFINITY, f64::min));
        prop_assert!(hi <= values.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    }

    #[test]
    fn standardizer_round_trip(seed in any::<u64>(), ds in 0usize..10, dd in 1usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let schema = FeatureSchema::synthetic(ds, dd);
        let std = fitted(&mut rng, &schema);
        let x = point(&mut rng, ds, dd);
        let z = std.transform(&x);
        prop_assert_eq!(&z[..ds], &x[..ds]);
        let back = std.invert(&z);
        for (a, b) in back.iter().zip(&x) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn stratified_split_proportions(benign in 1usize..60, malware in 1usize..60, frac in 0.1f64..0.9, seed in any::<u64>()) {
        let samples: Vec<Sample> = (0..benign + malware)
            .map(|i| sample(&format!("s{i:03}"), 2020, label(i >= benign), vec![0.0]))
            .collect();
        let (train, test) = stratified_split(&samples, frac, seed).unwrap();
        for (lab, count) in [(Label::Benign, benign), (Label::Malware, malware)] {
            let got = train.iter().filter(|s| s.label == lab).count();
            prop_assert_eq!(got, (frac * count as f64).round() as usize);
        }
        let mut ids: Vec<&str> = train.iter().chain(&test).map(|s| s.id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        prop_assert_eq!(ids.len(), samples.len());
    }

    #[test]
    fn knn_ignores_training_order(seed in any::<u64>(), n in 6usize..40, k in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Coarse integer grid so distance ties are common.
        let pts: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..3).map(|_| f64::from(rng.random_range(0u8..3))).collect())
            .collect();
        let labels: Vec<Label> = (0..n).map(|_| label(rng.random())).collect();
        let mut order: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let a = Knn::fit(pts.clone(), labels.clone(), k);
        let b = Knn::fit(
            order.iter().map(|&i| pts[i].clone()).collect(),
            order.iter().map(|&i| labels[i]).collect(),
            k,
        );
        for _ in 0..10 {
            let q: Vec<f64> = (0..3).map(|_| f64::from(rng.random_range(0u8..3))).collect();
            prop_assert_eq!(a.predict(&q), b.predict(&q));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn synthesized_samples_satisfy_domains(seed in any::<u64>(), kind in 0u8..3) {
        let kind = [DriftKind::Virtual, DriftKind::Real, DriftKind::Hybrid][kind as usize];
        let cfg = synth_cfg(4, 15, 6, 8, kind, seed);
        let ds = synthesize(&cfg).unwrap();
        prop_assert_eq!(ds.len(), 4 * 2 * 15);
        for s in ds.samples() {
            prop_assert!(ds.schema().first_violation(&s.features).is_none());
        }
        let slices = partition_by_year(&ds);
        let mut ids: Vec<&str> = slices.values().flat_map(|sl| sl.samples.iter().map(|s| s.id.as_str())).collect();
        let mut all: Vec<&str> = ds.samples().iter().map(|s| s.id.as_str()).collect();
        ids.sort_unstable();
        all.sort_unstable();
        prop_assert_eq!(ids, all);
        for (y, sl) in &slices {
            prop_assert!(sl.samples.iter().all(|s| s.year == *y));
        }
    }

    #[test]
    fn training_ignores_sample_order(seed in any::<u64>()) {
        let ds = synthesize(&synth_cfg(1, 30, 5, 5, DriftKind::Virtual, seed)).unwrap();
        let schema = ds.schema().clone();
        let train: Vec<Sample> = ds.samples().to_vec();
        let mut shuffled = train.clone();
        shuffled.reverse();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..shuffled.len()).rev() {
            shuffled.swap(i, rng.random_range(0..=i));
        }
        let std_a = Standardizer::fit(&train, &schema, "k").unwrap();
        let std_b = Standardizer::fit(&shuffled, &schema, "k").unwrap();
        let sa = SurrogateModel::train(&train, &std_a, "k").unwrap();
        let sb = SurrogateModel::train(&shuffled, &std_b, "k").unwrap();
        prop_assert_eq!(sa.weights(), sb.weights());
        for family in [ModelFamily::Gb, ModelFamily::Knn, ModelFamily::Mlp] {
            let a = train_target(family, &train, &std_a, 9).unwrap();
            let b = train_target(family, &shuffled, &std_b, 9).unwrap();
            for s in &train {
                prop_assert_eq!(a.predict(&s.features).unwrap(), b.predict(&s.features).unwrap());
            }
        }
    }
}

#[test]
fn spsa_ascends_in_nine_of_ten_trials() {
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    let cfg = AttackConfig::new(AttackKind::Spsa);
    let mut ascended = 0;
    for trial in 0..200u64 {
        let (ds, dd) = (rng.random_range(0..20), rng.random_range(1..30));
        let schema = FeatureSchema::synthetic(ds, dd);
        let m = random_surrogate(&mut rng, ds + dd);
        let z: Vec<f64> = (0..ds + dd).map(|_| rng.random_range(-2.0..2.0)).collect();
        let y = label(rng.random());
        let raw = spsa_raw(
            &m,
            &z,
            y,
            &cfg,
            EditBudget::for_schema(&schema),
            &schema,
            trial,
            None,
        );
        if m.loss(&raw, y.as_f64()) >= m.loss(&z, y.as_f64()) {
            ascended += 1;
        }
    }
    assert!(ascended >= 180, "loss increased in {ascended}/200 trials");
}

#[test]
fn bootstrap_interval_contains_median_of_symmetric_data() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let half: Vec<f64> = (0..50).map(|_| rng.random_range(0.0..10.0)).collect();
    let values: Vec<f64> = half.iter().flat_map(|&v| [v, -v]).collect();
    let med = lower_median(&values).unwrap();
    let (lo, hi) = bootstrap_median_ci(&values, 1000, 42).unwrap();
    assert!(lo <= med && med <= hi, "{lo} {med} {hi}");
}

#[test]
fn lower_median_takes_lower_middle() {
    assert_eq!(lower_median(&[4.0, 1.0, 3.0, 2.0]), Some(2.0));
    assert_eq!(lower_median(&[5.0]), Some(5.0));
}
