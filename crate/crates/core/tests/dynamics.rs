use unlearn_core::diffnet::*;
use unlearn_core::dynamics::*;
use unlearn_core::engines::*;
use unlearn_core::tasks::*;
use unlearn_core::taxonomy::*;
use unlearn_core::Error;
use DomainLevel::*;

fn setup() -> (Dataset, LabelTaxonomy, UnlearnTask, ClassifierParams) {
    let cfg = SynthConfig {
        superclasses: 2,
        classes_per_superclass: 3,
        samples_per_subset: 10,
        width: 5,
        seed: 21,
        ..SynthConfig::default()
    };
    let (data, tax) = generate_synthetic(&cfg).unwrap();
    let task = build_task(&data, &tax, ScenarioSpec::new(Class, Class, Superclass), &[1], &[0]).unwrap();
    let pre = pretrain(
        &data,
        &tax,
        Class,
        &[7],
        &TrainConfig {
            epochs: 4,
            seed: 2,
            ..TrainConfig::default()
        },
    )
    .unwrap();
    (data, tax, task, pre)
}

#[test]
fn recording_is_pure_and_ordered() {
    let (data, tax, task, pre) = setup();
    let mut trace = DynamicsTrace::new(&task, &tax);
    assert_eq!(trace.group_names(), ["f", "uf", "r"]);
    let copy = pre.clone();
    trace.record_epoch(&pre, &data, 0).unwrap();
    trace.record_epoch(&pre, &data, 1).unwrap();
    assert_eq!(pre, copy);
    assert_eq!(trace.len(), 2);
    let s = trace.snapshots();
    assert_eq!(s[0].groups, s[1].groups);
    assert_eq!(s[0].class_accuracy, s[1].class_accuracy);
    assert!(matches!(trace.record_epoch(&pre, &data, 1), Err(Error::Range(_))));
}

#[test]
fn group_losses_match_an_independent_pass() {
    let (data, tax, task, pre) = setup();
    let mut trace = DynamicsTrace::new(&task, &tax);
    trace.record_epoch(&pre, &data, 0).unwrap();
    let snap = trace.snapshot(0).unwrap();
    for (name, idx) in [("f", &task.f_idx), ("uf", &task.uf_idx), ("r", &task.r_idx)] {
        let g = &snap.groups[trace.group(name).unwrap()];
        let mut total = 0.0;
        let mut hits = 0;
        for &i in idx.iter() {
            let x = data.gather(&[i]);
            let out = logits(&pre, &x).unwrap();
            let y = data.sample(i).class;
            total += cross_entropy(out.row(0), y);
            hits += usize::from(argmax(out.row(0)) == y);
        }
        assert!((g.loss - total / idx.len() as f64).abs() < 1e-12, "{name}");
        assert_eq!(g.accuracy, 100.0 * hits as f64 / idx.len() as f64);
    }
}

#[test]
fn empty_groups_are_left_out() {
    let (data, tax, _, _) = setup();
    let task = build_task(&data, &tax, ScenarioSpec::new(Class, Class, Class), &[0], &[0]).unwrap();
    let trace = DynamicsTrace::new(&task, &tax);
    assert_eq!(trace.group_names(), ["f", "r"]);
}

#[test]
fn accuracy_drops_recompute_from_predictions() {
    let (data, tax, task, pre) = setup();
    let mut cfg = EngineConfig::default();
    cfg.train.epochs = 3;
    cfg.sched.total = 3;
    cfg.sched.k = 3.0;
    let out = run_unlearning(Method::Tarf, &task, &data, &tax, &pre, &cfg, None).unwrap();
    let drops = class_accuracy_drop(&out.trace, 0, 3).unwrap();
    assert!(class_accuracy_drop(&out.trace, 2, 2).unwrap().iter().all(|&d| d == 0.0));

    let acc = |p: &ClassifierParams, c: usize| {
        let idx = data.indices_with(Class, &[c]);
        let pred = predict(p, &data.gather(&idx)).unwrap();
        100.0 * pred.iter().filter(|&&y| y == c).count() as f64 / idx.len() as f64
    };
    for (c, d) in drops.iter().enumerate() {
        assert_eq!(*d, acc(&pre, c) - acc(&out.params, c), "class {c}");
    }
    assert!(matches!(class_accuracy_drop(&out.trace, 0, 9), Err(Error::Range(_))));
}

#[test]
fn target_class_selection() {
    let mut drops = vec![1.0; 10];
    drops[3] = 40.0;
    drops[7] = 35.0;
    assert_eq!(select_target_classes(&drops, 2).unwrap(), vec![3, 7]);
    assert!(select_target_classes(&drops, 0).unwrap().is_empty());
    assert_eq!(select_target_classes(&[2.0, 5.0, 5.0, 5.0], 2).unwrap(), vec![1, 2]);
    assert!(matches!(select_target_classes(&drops, 11), Err(Error::Range(_))));
}

#[test]
fn feature_centers_and_distances() {
    let (data, _, _, pre) = setup();
    let one = feature_center(&pre, &data, &[4]).unwrap();
    let f4 = penultimate_features(&pre, &data.gather(&[4])).unwrap();
    assert_eq!(one, f4.row(0));
    assert_eq!(feature_distances(&pre, &data, &[4], &one).unwrap(), vec![0.0]);

    let two = feature_center(&pre, &data, &[4, 9]).unwrap();
    let f9 = penultimate_features(&pre, &data.gather(&[9])).unwrap();
    for (c, (a, b)) in two.iter().zip(f4.row(0).iter().zip(f9.row(0))) {
        assert!((c - (a + b) / 2.0).abs() < 1e-15);
    }

    let idx: Vec<usize> = (0..100).collect();
    let center = feature_center(&pre, &data, &idx).unwrap();
    let mut streaming = vec![0.0; center.len()];
    for (k, &i) in idx.iter().enumerate() {
        let h = penultimate_features(&pre, &data.gather(&[i])).unwrap();
        for (s, v) in streaming.iter_mut().zip(h.row(0)) {
            *s += (v - *s) / (k + 1) as f64;
        }
    }
    for (a, b) in center.iter().zip(&streaming) {
        assert!((a - b).abs() < 1e-10);
    }

    let mut d = feature_distances(&pre, &data, &idx, &center).unwrap();
    let mut rev: Vec<usize> = idx.iter().rev().copied().collect();
    rev.rotate_left(13);
    let mut e = feature_distances(&pre, &data, &rev, &center).unwrap();
    d.sort_by(f64::total_cmp);
    e.sort_by(f64::total_cmp);
    assert_eq!(d, e);
    assert!(d.iter().all(|&x| x >= 0.0));

    assert!(matches!(feature_center(&pre, &data, &[]), Err(Error::Data(_))));
    assert!(matches!(feature_distances(&pre, &data, &[0], &[0.0]), Err(Error::Shape(_))));
}

#[test]
fn siblings_sit_closer_under_a_superclass_model() {
    let (data, tax) = generate_synthetic(&SynthConfig::default()).unwrap();
    let pre = pretrain(&data, &tax, Superclass, &[64, 32], &TrainConfig::default()).unwrap();
    let f = data.indices_with(Class, &[0]);
    let center = feature_center(&pre, &data, &f).unwrap();
    let dist = |classes: &[usize]| {
        mean(&feature_distances(&pre, &data, &data.indices_with(Class, classes), &center).unwrap())
    };
    let siblings: Vec<usize> = (1..3).collect();
    let others: Vec<usize> = (3..12).collect();
    assert!(dist(&siblings) < dist(&others));
}

#[test]
fn gravity_probes_on_one_seed() {
    let (data, tax) = generate_synthetic(&SynthConfig::default()).unwrap();
    let cfg = EngineConfig::default();
    for (model, probe_strong) in [(Class, false), (Superclass, true)] {
        let task = build_task(&data, &tax, ScenarioSpec::new(Class, model, Class), &[0], &[0]).unwrap();
        let pre = pretrain(&data, &tax, model, &[64, 32], &TrainConfig::default()).unwrap();
        let after = tarf_phase_one(&task.view(&data, &tax), &pre, &cfg).unwrap();
        let probe = if probe_strong {
            strong_gravity_probe(&pre, &after, &data, &tax, 0, model).unwrap()
        } else {
            weak_gravity_probe(&pre, &after, &data, &task.f_idx, Class, model).unwrap()
        };
        assert!(probe.holds(), "{model}: {probe:?}");
    }
}
