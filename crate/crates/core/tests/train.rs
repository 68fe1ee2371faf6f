use cpad::dataset::{make_split, DatasetSplit};
use cpad::error::Error;
use cpad::model::{Hyperparams, ModelParams};
use cpad::scenario::{AnomalyReport, Scenario};
use cpad::sim::{generate_indexed, GenConfig};
use cpad::train::{evaluate, predict, train, LabeledScenario, SampleStore, TrainConfig};

fn toy_set(seed: u64, n: usize) -> Vec<Scenario> {
    let cfg = GenConfig {
        seed,
        ..GenConfig::default()
    };
    (0..n).map(|i| generate_indexed(&cfg, i).unwrap().scenario).collect()
}

fn setup(scenarios: &[Scenario]) -> (SampleStore, DatasetSplit) {
    let split = make_split(scenarios, (0.8, 0.1, 0.1), 0).unwrap();
    (SampleStore::from_scenarios(scenarios, 50.0).unwrap(), split)
}

fn hyper(seed: u64) -> Hyperparams {
    Hyperparams {
        init_seed: seed,
        ..Hyperparams::default()
    }
}

#[test]
fn second_epoch_loss_drops() {
    let (store, split) = setup(&toy_set(3, 20));
    let mut drops = 0;
    for seed in 0..50 {
        let cfg = TrainConfig {
            epochs: 2,
            patience: 10,
            seed,
            ..TrainConfig::default()
        };
        let out = train(&store, &split, hyper(seed), &cfg, |_| {}).unwrap();
        assert_eq!(out.log.len(), 2);
        if out.log[1].train_loss < out.log[0].train_loss {
            drops += 1;
        }
    }
    assert!(drops >= 45, "loss dropped in {drops}/50 seeds");
}

#[test]
fn same_seed_same_weights_and_reload_is_bitwise() {
    let (store, split) = setup(&toy_set(4, 20));
    let cfg = TrainConfig {
        epochs: 3,
        seed: 11,
        ..TrainConfig::default()
    };
    let a = train(&store, &split, hyper(11), &cfg, |_| {}).unwrap();
    let b = train(&store, &split, hyper(11), &cfg, |_| {}).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.best_epoch, b.best_epoch);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    a.params.save(&path).unwrap();
    let reloaded = ModelParams::load(&path).unwrap();
    let before = evaluate(&a.params, &store, &split.val, None).unwrap();
    let after = evaluate(&reloaded, &store, &split.val, None).unwrap();
    assert_eq!(before.report.to_json(), after.report.to_json());
    for (x, y) in before.predictions.iter().zip(&after.predictions) {
        assert_eq!(x.probability.to_bits(), y.probability.to_bits());
    }
}

#[test]
fn all_normal_labels_predict_normal() {
    let mut scenarios = toy_set(5, 20);
    for s in &mut scenarios {
        for a in &mut s.agents {
            a.label = Some(AnomalyReport::normal());
        }
    }
    let (store, split) = setup(&scenarios);
    let cfg = TrainConfig {
        epochs: 3,
        ..TrainConfig::default()
    };
    let out = train(&store, &split, hyper(0), &cfg, |_| {}).unwrap();
    let refs = store.resolve(&split.val).unwrap();
    let probs = predict(&out.params, &store, &refs, None).unwrap();
    assert!(probs.iter().all(|&p| p <= 0.5), "{probs:?}");
}

#[test]
fn unlabeled_trajectory_is_rejected() {
    let mut s = toy_set(6, 1).remove(0);
    s.agents[2].label = None;
    match LabeledScenario::new(&s, 50.0) {
        Err(Error::Unlabeled(what)) => assert!(what.ends_with("agent_2"), "{what}"),
        other => panic!("expected Unlabeled, got {other:?}"),
    }
}

#[test]
fn training_refuses_overlapping_test_segment() {
    let (store, mut split) = setup(&toy_set(7, 10));
    split.train.push(split.test[0].clone());
    assert!(train(&store, &split, hyper(0), &TrainConfig::default(), |_| {}).is_err());
}

#[test]
fn training_never_needs_test_scenarios() {
    // A store holding only train and val scenarios is enough to train.
    let scenarios = toy_set(8, 20);
    let split = make_split(&scenarios, (0.8, 0.1, 0.1), 0).unwrap();
    let test_ids = split.scenario_ids(cpad::dataset::Segment::Test);
    let kept: Vec<Scenario> = scenarios.into_iter().filter(|s| !test_ids.contains(&s.scenario_id)).collect();
    let store = SampleStore::from_scenarios(&kept, 50.0).unwrap();
    let cfg = TrainConfig {
        epochs: 1,
        ..TrainConfig::default()
    };
    assert!(train(&store, &split, hyper(0), &cfg, |_| {}).is_ok());
}
