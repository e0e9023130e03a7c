use std::collections::BTreeMap;
use std::path::Path;

use emotest::fairness_sim::{balance_groups, n_min_bin, simulate_threshold, FairnessMetric, RandomModel};
use emotest::manifest::{parse_manifest, partition_by_attribute, write_manifest, LoadOptions};
use emotest::metrics::{
    class_metrics, concordance_corr, group_disparity, jensen_shannon_distance, pearson_corr, spearman_rho,
    unchanged_fraction, DisparityMode,
};
use emotest::perturb::{
    apply, edit_signal, first_order_filter, mix_at_snr, spectral_tilt, AudioBuffer, EditMode, FilterKind, Operation,
    PerturbContext, PerturbationSpec, Placement,
};
use emotest::suite::{aggregate, Category, Comparison, Instance, MetricId, TestResult};
use emotest::{AttrValue, BinSpec, DatasetManifest, GroupPartition, Label, PredictionSet, Sample, Task};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CLASSES: [&str; 4] = ["anger", "happiness", "neutral", "sadness"];

fn unit() -> impl Strategy<Value = f64> {
    0.0..=1.0f64
}

fn values(len: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(unit(), len)
}

fn class_labels(len: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(0..4usize, len)
}

fn signal(len: std::ops::Range<usize>) -> impl Strategy<Value = AudioBuffer> {
    prop::collection::vec(-0.5..0.5f64, len).prop_map(|v| AudioBuffer::new(v, 16000).unwrap())
}

fn bits(a: &AudioBuffer) -> Vec<u64> {
    a.samples.iter().map(|v| v.to_bits()).collect()
}

/// Manifest with optional sex attribute and gold labels for two tasks.
fn manifest_strategy() -> impl Strategy<Value = DatasetManifest> {
    prop::collection::vec((prop::option::of(0..2usize), unit(), 0..4usize, prop::option::of(0..3usize)), 1..40).prop_map(
        |rows| {
            let samples = rows
                .into_iter()
                .enumerate()
                .map(|(i, (sex, v, c, spk))| {
                    let mut s = Sample::new(format!("s{i}"));
                    if let Some(x) = sex {
                        s.attrs.insert("sex".into(), AttrValue::Text(["female", "male"][x].into()));
                    }
                    s.speaker = spk.map(|k| format!("spk{k}"));
                    s.gold.insert(Task::Valence, Label::value(v).unwrap());
                    s.gold.insert(Task::Categories, Label::class(CLASSES[c]));
                    s
                })
                .collect();
            DatasetManifest {
                name: "m".into(),
                samples,
                sample_rate_hz: Some(16000),
                unknown_classes: Default::default(),
            }
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn manifest_round_trip(m in manifest_strategy()) {
        let mut buf = Vec::new();
        write_manifest(&m, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let back = parse_manifest(&text, Path::new("m.jsonl"), Path::new("."), "m", &LoadOptions::default()).unwrap();
        prop_assert_eq!(back, m);
    }

    #[test]
    fn partition_covers_every_sample_once(m in manifest_strategy()) {
        if let Ok(p) = partition_by_attribute(&m, "sex") {
            let mut seen: Vec<&String> = p.groups.values().flatten().chain(&p.excluded).collect();
            prop_assert_eq!(seen.len(), m.samples.len());
            seen.sort();
            seen.dedup();
            prop_assert_eq!(seen.len(), m.samples.len());
        }
    }

    #[test]
    fn labels_stay_in_unit_interval(v in -2.0..3.0f64) {
        prop_assert_eq!(Label::value(v).is_ok(), (0.0..=1.0).contains(&v));
    }

    #[test]
    fn ccc_bounded_and_equals_pcc_for_permutations(t in values(2..=64), seed in any::<u64>()) {
        let mut p = t.clone();
        p.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let ccc = concordance_corr(&t, &p).unwrap();
        prop_assert!(ccc.abs() <= 1.0 + 1e-12);
        if let Ok(pcc) = pearson_corr(&t, &p) {
            // same multiset: equal means and variances
            prop_assert!((ccc - pcc).abs() < 1e-9, "{} vs {}", ccc, pcc);
        }
    }

    #[test]
    fn class_metrics_ignore_renaming_and_joint_permutation(
        pairs in prop::collection::vec((0..4usize, 0..4usize), 1..64),
        seed in any::<u64>(),
    ) {
        let names = |v: &[(usize, usize)], first: bool, table: &[&'static str; 4]| -> Vec<&'static str> {
            v.iter().map(|(a, b)| table[if first { *a } else { *b }]).collect()
        };
        let base = class_metrics(&names(&pairs, true, &CLASSES), &names(&pairs, false, &CLASSES), &CLASSES).unwrap();
        let renamed_table = ["w", "x", "y", "z"];
        let renamed = class_metrics(&names(&pairs, true, &renamed_table), &names(&pairs, false, &renamed_table), &renamed_table).unwrap();
        prop_assert!((base.uar - renamed.uar).abs() < 1e-12);
        prop_assert!((base.uap - renamed.uap).abs() < 1e-12);
        let mut shuffled = pairs.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let permuted = class_metrics(&names(&shuffled, true, &CLASSES), &names(&shuffled, false, &CLASSES), &CLASSES).unwrap();
        prop_assert_eq!(base, permuted);
    }

    #[test]
    fn js_distance_symmetric_bounded_and_zero_iff_same_histogram(
        a in values(1..=64),
        b in values(1..=64),
        k in 2..12usize,
    ) {
        let bins = BinSpec::new(k).unwrap();
        let ab = jensen_shannon_distance(&a, &b, bins).unwrap();
        let ba = jensen_shannon_distance(&b, &a, bins).unwrap();
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&ab));
        let hist = |x: &[f64]| {
            emotest::metrics::bin_values(x, bins).iter().map(|&c| c as f64 / x.len() as f64).collect::<Vec<_>>()
        };
        prop_assert_eq!(ab == 0.0, hist(&a) == hist(&b));
    }

    #[test]
    fn spearman_tie_free_is_pearson_of_integer_ranks(a in values(2..=64), b in values(2..=64)) {
        let n = a.len().min(b.len());
        let (a, b) = (&a[..n], &b[..n]);
        let distinct = |x: &[f64]| {
            let mut s = x.to_vec();
            s.sort_by(f64::total_cmp);
            s.windows(2).all(|w| w[0] != w[1])
        };
        prop_assume!(distinct(a) && distinct(b));
        let rank = |x: &[f64]| -> Vec<f64> {
            x.iter().map(|v| (x.iter().filter(|w| *w < v).count() + 1) as f64).collect()
        };
        prop_assert_eq!(spearman_rho(a, b).unwrap(), pearson_corr(&rank(a), &rank(b)).unwrap());
    }

    #[test]
    fn disparity_against_itself_is_zero(v in values(1..=64), c in class_labels(1..=64), k in 2..12usize) {
        let vals: Vec<Label> = v.iter().map(|x| Label::value(*x).unwrap()).collect();
        let cls: Vec<Label> = c.iter().map(|i| Label::class(CLASSES[*i])).collect();
        let bins = Some(BinSpec::new(k).unwrap());
        for (labels, mode) in [
            (&vals, DisparityMode::DiffMean),
            (&vals, DisparityMode::RelDiffPerBin),
            (&cls, DisparityMode::RelDiffPerClass),
        ] {
            let d = group_disparity(labels, labels, mode, bins, None).unwrap();
            prop_assert!(d.values.values().all(|x| *x == 0.0), "{:?}", d);
        }
    }

    #[test]
    fn unchanged_of_a_set_with_itself_is_one(v in values(1..=64), c in class_labels(1..=64)) {
        let mut dims = PredictionSet::new("m", Task::Arousal);
        for (i, x) in v.iter().enumerate() {
            dims.insert(format!("s{i}"), Label::value(*x).unwrap());
        }
        let mut cats = PredictionSet::new("m", Task::Categories);
        for (i, x) in c.iter().enumerate() {
            cats.insert(format!("s{i}"), Label::class(CLASSES[*x]));
        }
        prop_assert_eq!(unchanged_fraction(&dims, &dims).unwrap().fraction, 1.0);
        prop_assert_eq!(unchanged_fraction(&cats, &cats).unwrap().fraction, 1.0);
    }

    #[test]
    fn n_min_bin_is_monotone(n in 0..1_000_000usize) {
        prop_assert!(n_min_bin(n) <= n_min_bin(n + 1));
    }

    #[test]
    fn balanced_groups_have_target_size_and_come_from_originals(
        sizes in prop::collection::vec(5..60usize, 2..4),
        target in 1..5usize,
        categorical in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let task = if categorical { Task::Categories } else { Task::Valence };
        let mut samples = Vec::new();
        let mut groups = BTreeMap::new();
        for (g, n) in sizes.iter().enumerate() {
            let ids: Vec<String> = (0..*n).map(|i| format!("g{g}-{i}")).collect();
            for id in &ids {
                let mut s = Sample::new(id);
                let label = if categorical {
                    Label::class(CLASSES[rng.random_range(0..4)])
                } else {
                    Label::value(rng.random_range(0.0..1.0)).unwrap()
                };
                s.gold.insert(task, label);
                samples.push(s);
            }
            groups.insert(format!("g{g}"), ids);
        }
        let m = DatasetManifest { name: "b".into(), samples, sample_rate_hz: None, unknown_classes: Default::default() };
        let part = GroupPartition { attribute: "g".into(), groups, excluded: vec![] };
        let out = balance_groups(&m, &part, task, target, seed).unwrap();
        for (name, ids) in &out.groups {
            prop_assert_eq!(ids.len(), target);
            prop_assert!(ids.iter().all(|id| part.groups[name].contains(id)));
            let mut unique = ids.clone();
            unique.dedup();
            prop_assert_eq!(unique.len(), target);
        }
    }

    #[test]
    fn perturbations_are_deterministic(x in signal(100..2000), seed in any::<u64>(), snr in -5.0..40.0f64) {
        let spec = PerturbationSpec::new(Operation::WhiteNoise { snr_db: snr.into() }, seed);
        let ctx = PerturbContext::default();
        let a = apply(&spec, &x, "id", &ctx);
        let b = apply(&spec, &x, "id", &ctx);
        prop_assert_eq!(a.map(|a| bits(&a)).ok(), b.map(|b| bits(&b)).ok());
    }

    #[test]
    fn full_placement_hits_the_target_snr(x in signal(50..3000), noise in signal(10..3000), snr in -20.0..60.0f64) {
        prop_assume!(x.rms() > 1e-6 && noise.rms() > 1e-6);
        let out = mix_at_snr(&x, &noise, snr, Placement::Full, 0).unwrap();
        let added: Vec<f64> = out.samples.iter().zip(&x.samples).map(|(o, s)| o - s).collect();
        let measured = 20.0 * (x.rms() / emotest::perturb::rms(&added)).log10();
        prop_assert!((measured - snr).abs() <= 0.01, "{} vs {}", measured, snr);
    }

    #[test]
    fn append_then_crop_is_identity(x in signal(1..500), n in 0..500usize) {
        let back = edit_signal(&edit_signal(&x, EditMode::AppendZeros, n).unwrap(), EditMode::CropEnd, n).unwrap();
        let front = edit_signal(&edit_signal(&x, EditMode::PrependZeros, n).unwrap(), EditMode::CropStart, n).unwrap();
        prop_assert_eq!(bits(&back), bits(&x));
        prop_assert_eq!(bits(&front), bits(&x));
    }

    #[test]
    fn fingerprint_changes_iff_parameters_change(a in -10i32..10, b in -10i32..10, s in 0u64..3, t in 0u64..3) {
        let fa = PerturbationSpec::new(Operation::WhiteNoise { snr_db: (a as f64).into() }, s).fingerprint();
        let fb = PerturbationSpec::new(Operation::WhiteNoise { snr_db: (b as f64).into() }, t).fingerprint();
        prop_assert_eq!(fa == fb, a == b && s == t);
    }

    #[test]
    fn aggregation_ignores_order(
        results in prop::collection::vec(result_strategy(), 1..12),
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut shuffled = results.clone();
        shuffled.shuffle(&mut rng);
        for r in &mut shuffled {
            r.instances.shuffle(&mut rng);
        }
        prop_assert_eq!(aggregate(&results), aggregate(&shuffled));
    }

    #[test]
    fn pass_fraction_is_passed_over_scored(r in result_strategy()) {
        let passed = r.instances.iter().filter(|i| !i.skipped && i.passed).count();
        let scored = r.instances.iter().filter(|i| !i.skipped).count();
        let want = (scored > 0).then(|| passed as f64 / scored as f64);
        prop_assert_eq!(r.recompute_pass_fraction(), want);
        if let Some(f) = want {
            prop_assert!((0.0..=1.0).contains(&f));
        }
    }
}

fn result_strategy() -> impl Strategy<Value = TestResult> {
    let tests = ["Correctness Regression", "Fairness Sex", "Robustness Spectral Tilt"];
    (
        0..3usize,
        prop::sample::select(vec![Task::Arousal, Task::Valence, Task::Categories]),
        prop::collection::vec((any::<bool>(), any::<bool>()), 0..10),
        any::<u32>(),
    )
        .prop_map(move |(t, task, outcomes, tag)| {
            let instances: Vec<Instance> = outcomes
                .iter()
                .enumerate()
                .map(|(i, (passed, skipped))| Instance {
                    dataset: "d".into(),
                    key: format!("k{i}"),
                    value: (!skipped).then_some(0.5),
                    threshold: 0.1,
                    passed: *passed && !skipped,
                    skipped: *skipped,
                    skip_reason: skipped.then(|| "reason".into()),
                })
                .collect();
            let mut r = TestResult {
                spec_id: format!("spec{tag}"),
                test: tests[t].into(),
                category: Category::ALL[t],
                task,
                metric: MetricId::Ccc,
                comparison: Comparison::Greater,
                threshold: 0.1,
                instances,
                pass_fraction: None,
            };
            r.pass_fraction = r.recompute_pass_fraction();
            r
        })
}

#[test]
fn simulation_is_deterministic() {
    let model = RandomModel::gaussian();
    let a = simulate_threshold(FairnessMetric::DiffMean, 3, 200, &model, None, 50, 17).unwrap();
    let b = simulate_threshold(FairnessMetric::DiffMean, 3, 200, &model, None, 50, 17).unwrap();
    assert_eq!(a.to_bits(), b.to_bits());
    let uniform = RandomModel::uniform(4);
    let c = simulate_threshold(FairnessMetric::RelDiffPerClass, 2, 100, &uniform, None, 50, 17).unwrap();
    let d = simulate_threshold(FairnessMetric::RelDiffPerClass, 2, 100, &uniform, None, 50, 17).unwrap();
    assert_eq!(c.to_bits(), d.to_bits());
}

#[test]
fn thresholds_shrink_with_group_size() {
    let model = RandomModel::gaussian();
    let avg = |n: usize| -> f64 {
        (0..20u64)
            .map(|s| simulate_threshold(FairnessMetric::DiffMean, 3, n, &model, None, 100, s).unwrap())
            .sum::<f64>()
            / 20.0
    };
    let (small, large) = (avg(250), avg(4000));
    assert!(large < small, "{large} >= {small}");
}

#[test]
fn n_min_bin_ratio_approaches_tail_mass() {
    let phi = emotest::fairness_sim::standard_normal_cdf(-1.5);
    let n = 10_000_000;
    assert!((n_min_bin(n) as f64 / n as f64 - phi).abs() < 1e-6);
}

#[test]
fn filters_are_stable_on_long_random_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = AudioBuffer::new((0..1_000_000).map(|_| rng.random_range(-1.0..1.0)).collect(), 16000).unwrap();
    let check = |y: &AudioBuffer| {
        assert!(y.samples.iter().all(|v| v.is_finite() && v.abs() < 10.0));
        assert_eq!(y.rate_hz, x.rate_hz);
    };
    for kind in [FilterKind::Lowpass, FilterKind::Highpass] {
        check(&first_order_filter(&x, kind, 1000.0).unwrap());
    }
    for slope in [-12.0, -3.0, 3.0, 12.0] {
        check(&spectral_tilt(&x, slope).unwrap());
    }
    let ctx = PerturbContext::default();
    for (kind, params) in [("phone", "{}"), ("compressor", "{}"), ("filter", r#"{"filter": "highpass", "cutoff_hz": 300}"#)] {
        let spec = PerturbationSpec::from_kind(kind, serde_json::from_str(params).unwrap(), 3).unwrap();
        check(&apply(&spec, &x, "long", &ctx).unwrap());
    }
}

#[test]
fn perturbations_keep_the_sample_rate() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut ctx = PerturbContext::default();
    let noise = |rng: &mut ChaCha8Rng, n: usize, rate: u32| {
        AudioBuffer::new((0..n).map(|_| rng.random_range(-0.3..0.3)).collect(), rate).unwrap()
    };
    ctx.pools.insert("speech".into(), (0..8).map(|_| noise(&mut rng, 4000, 22050)).collect());
    ctx.pools.insert("ir".into(), vec![AudioBuffer::new(vec![1.0, 0.3, 0.1], 8000).unwrap()]);
    let x = noise(&mut rng, 16000, 16000);
    for (kind, params) in [
        ("gain", r#"{"gain_db": 3}"#),
        ("white_noise", r#"{"snr_db": 10}"#),
        ("tone", r#"{"freq_hz": 6000, "snr_db": 40}"#),
        ("edit", r#"{"mode": "crop_start", "n": 100}"#),
        ("clip", r#"{"fraction": 0.05}"#),
        ("filter", r#"{"filter": "lowpass", "cutoff_hz": 2000}"#),
        ("spectral_tilt", r#"{"slope_db_per_octave": 3}"#),
        ("babble", r#"{"pool": "@speech", "snr_db": 5}"#),
        ("add_noise", r#"{"pool": "@speech", "snr_db": 5}"#),
        ("impulse_response", r#"{"ir": "@ir"}"#),
        ("phone", "{}"),
        ("compressor", "{}"),
    ] {
        let spec = PerturbationSpec::from_kind(kind, serde_json::from_str(params).unwrap(), 5).unwrap();
        let y = apply(&spec, &x, "rate", &ctx).unwrap();
        assert_eq!(y.rate_hz, x.rate_hz, "{kind}");
    }
}

