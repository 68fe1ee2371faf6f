//! Mini-batch training, validation-based early stopping and evaluation.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::autodiff::{Adam, Graph, Tensor};
use crate::blackout::{BlackoutMask, BlackoutSpec};
use crate::config::KvConfig;
use crate::dataset::{DatasetReader, DatasetSplit, SampleKey};
use crate::error::{Error, Result};
use crate::features::ScenarioFeatures;
use crate::gat::Bound;
use crate::metrics::MetricsReport;
use crate::model::{Hyperparams, ModelParams};
use crate::scenario::Scenario;
use crate::sim::derive_seed;
use crate::temporal::{check_horizon, forward_group, EgoRequest};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub pos_weight: f64,
    /// Epochs without a validation F1 improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Blackout applied to training samples; off by default.
    pub train_blackout: Option<BlackoutSpec>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 16,
            lr: 1e-3,
            pos_weight: 3.0,
            patience: 5,
            seed: 0,
            train_blackout: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.lr > 0.0) || !(self.pos_weight > 0.0) {
            return Err(Error::Config("lr and pos_weight must be positive".into()));
        }
        Ok(())
    }

    pub fn apply(&mut self, kv: &mut KvConfig) -> Result<()> {
        kv.take_into("epochs", &mut self.epochs)?;
        kv.take_into("batch_size", &mut self.batch_size)?;
        kv.take_into("lr", &mut self.lr)?;
        kv.take_into("pos_weight", &mut self.pos_weight)?;
        kv.take_into("patience", &mut self.patience)?;
        kv.take_into("seed", &mut self.seed)?;
        self.validate()
    }
}

/// Features and binary labels of one labeled scenario.
#[derive(Debug, Clone)]
pub struct LabeledScenario {
    pub features: ScenarioFeatures,
    pub agent_ids: Vec<String>,
    pub labels: Vec<bool>,
}

impl LabeledScenario {
    pub fn new(scenario: &Scenario, max_range: f64) -> Result<Self> {
        let labels = scenario
            .agents
            .iter()
            .map(|a| {
                a.label.as_ref().map(|r| r.is_anomalous).ok_or_else(|| {
                    Error::Unlabeled(format!("{}/{}", scenario.scenario_id, a.agent_id))
                })
            })
            .collect::<Result<_>>()?;
        Ok(LabeledScenario {
            features: ScenarioFeatures::from_scenario(scenario, max_range)?,
            agent_ids: scenario.agents.iter().map(|a| a.agent_id.clone()).collect(),
            labels,
        })
    }
}

/// A resolved sample: scenario position in a [`SampleStore`] and agent index.
pub type SampleRef = (usize, usize);

/// Featurized scenarios addressable by id.
#[derive(Debug, Clone, Default)]
pub struct SampleStore {
    scenarios: Vec<LabeledScenario>,
    index: HashMap<String, usize>,
}

impl SampleStore {
    pub fn from_scenarios(scenarios: &[Scenario], max_range: f64) -> Result<Self> {
        let mut store = SampleStore::default();
        for s in scenarios {
            store.insert(LabeledScenario::new(s, max_range)?)?;
        }
        Ok(store)
    }

    /// Streams a dataset file, keeping only scenarios accepted by `keep`.
    pub fn load(path: impl AsRef<Path>, max_range: f64, keep: impl Fn(&str) -> bool) -> Result<Self> {
        let mut store = SampleStore::default();
        for s in DatasetReader::open(path)? {
            let s = s?;
            if keep(&s.scenario_id) {
                store.insert(LabeledScenario::new(&s, max_range)?)?;
            }
        }
        Ok(store)
    }

    pub fn insert(&mut self, s: LabeledScenario) -> Result<()> {
        let id = s.features.scenario_id.clone();
        if self.index.insert(id.clone(), self.scenarios.len()).is_some() {
            return Err(Error::schema(format!("duplicate scenario id {id}")));
        }
        self.scenarios.push(s);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.scenarios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenarios.is_empty()
    }

    pub fn contains(&self, scenario_id: &str) -> bool {
        self.index.contains_key(scenario_id)
    }

    pub fn scenario(&self, i: usize) -> &LabeledScenario {
        &self.scenarios[i]
    }

    pub fn label(&self, r: SampleRef) -> bool {
        self.scenarios[r.0].labels[r.1]
    }

    pub fn resolve(&self, keys: &[SampleKey]) -> Result<Vec<SampleRef>> {
        keys.iter()
            .map(|(sid, aid)| {
                let si = *self
                    .index
                    .get(sid)
                    .ok_or_else(|| Error::invalid(format!("scenario {sid} not in dataset")))?;
                let ai = self.scenarios[si]
                    .agent_ids
                    .iter()
                    .position(|a| a == aid)
                    .ok_or_else(|| Error::invalid(format!("agent {aid} not in scenario {sid}")))?;
                Ok((si, ai))
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_f1: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the best validation F1.
    pub params: ModelParams,
    pub best_epoch: usize,
    pub log: Vec<EpochLog>,
}

/// Fails when any train or validation scenario also appears in test.
pub fn check_disjoint(split: &DatasetSplit) -> Result<()> {
    let test: HashSet<&str> = split.test.iter().map(|(s, _)| s.as_str()).collect();
    match split.train.iter().chain(&split.val).find(|(s, _)| test.contains(s.as_str())) {
        Some((s, _)) => Err(Error::invalid(format!("scenario {s} is in test and in train or val"))),
        None => Ok(()),
    }
}

/// Samples grouped by scenario, preserving first-appearance order.
fn group_by_scenario(samples: &[SampleRef]) -> Vec<(usize, Vec<usize>)> {
    let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
    let mut pos: HashMap<usize, usize> = HashMap::new();
    for &(s, a) in samples {
        match pos.get(&s) {
            Some(&g) => groups[g].1.push(a),
            None => {
                pos.insert(s, groups.len());
                groups.push((s, vec![a]));
            }
        }
    }
    groups
}

/// Loss contribution and parameter gradients of one scenario's share of a
/// batch. The loss is weighted so that summing over groups gives the batch
/// mean.
fn group_gradients(
    params: &ModelParams,
    store: &SampleStore,
    scenario: usize,
    egos: &[usize],
    masks: &[Option<BlackoutMask>],
    weight: f64,
    pos_weight: f64,
) -> Result<(f64, Vec<Tensor>)> {
    let sc = store.scenario(scenario);
    let mut g = Graph::new();
    let p = Bound::new(&mut g, params, true)?;
    let requests: Vec<EgoRequest<'_>> = egos
        .iter()
        .zip(masks)
        .map(|(&ego, m)| EgoRequest { ego, mask: m.as_ref() })
        .collect();
    let probs = forward_group(&mut g, &p, &sc.features, &requests, None)?;
    let labels: Vec<f64> = egos.iter().map(|&a| if sc.labels[a] { 1.0 } else { 0.0 }).collect();
    let joined = if probs.len() == 1 { probs[0] } else { g.concat(&probs, 1)? };
    let loss = g.bce(joined, &labels, pos_weight)?;
    let loss = g.scale(loss, weight);
    g.backward(loss)?;
    let value = g.value(loss).data()[0];
    let grads = p
        .vars
        .iter()
        .zip(&params.tensors)
        .map(|(&v, t)| g.take_grad(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();
    Ok((value, grads))
}

/// Trains from fresh initialization on `split.train`, selecting the epoch
/// with the best F1 on `split.val`. Test samples are never read.
pub fn train(
    store: &SampleStore,
    split: &DatasetSplit,
    hyper: Hyperparams,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    hyper.validate()?;
    check_disjoint(split)?;
    let train_refs = store.resolve(&split.train)?;
    let val_refs = store.resolve(&split.val)?;
    if train_refs.is_empty() {
        return Err(Error::invalid("training split is empty"));
    }
    for &(s, _) in train_refs.iter().chain(&val_refs) {
        check_horizon(&hyper, store.scenario(s).features.horizon)?;
    }

    let mut params = ModelParams::init(hyper)?;
    let mut adam = Adam::new(cfg.lr);
    let mut best = (f64::NEG_INFINITY, 0usize, params.clone());
    let mut since_best = 0;
    let mut log = Vec::new();

    // Scenarios stay whole so that a batch shares each sensor projection.
    let groups = group_by_scenario(&train_refs);
    for epoch in 1..=cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, epoch as u64));
        let mut order: Vec<usize> = (0..groups.len()).collect();
        order.shuffle(&mut rng);
        let mut samples: Vec<SampleRef> = Vec::with_capacity(train_refs.len());
        for &gi in &order {
            let (s, agents) = &groups[gi];
            let mut agents = agents.clone();
            agents.shuffle(&mut rng);
            samples.extend(agents.into_iter().map(|a| (*s, a)));
        }

        let mut loss_sum = 0.0;
        for (bi, batch) in samples.chunks(cfg.batch_size).enumerate() {
            let weight_each = 1.0 / batch.len() as f64;
            let parts = group_by_scenario(batch);
            let results: Vec<(f64, Vec<Tensor>)> = parts
                .par_iter()
                .map(|(s, egos)| {
                    let sc = &store.scenario(*s).features;
                    let masks = egos
                        .iter()
                        .enumerate()
                        .map(|(k, &ego)| match &cfg.train_blackout {
                            Some(spec) => {
                                let seed = derive_seed(spec.seed, ((epoch as u64) << 40) ^ ((bi as u64) << 8) ^ k as u64);
                                spec.mask(sc.n_agents, sc.horizon, ego, derive_seed(seed, *s as u64)).map(Some)
                            }
                            None => Ok(None),
                        })
                        .collect::<Result<Vec<_>>>()?;
                    group_gradients(
                        &params,
                        store,
                        *s,
                        egos,
                        &masks,
                        weight_each * egos.len() as f64,
                        cfg.pos_weight,
                    )
                })
                .collect::<Result<_>>()?;
            let mut grads: Vec<Tensor> = params.tensors.iter().map(|t| Tensor::zeros(t.shape())).collect();
            for (loss, gs) in &results {
                loss_sum += loss * batch.len() as f64;
                for (acc, g) in grads.iter_mut().zip(gs) {
                    acc.add_assign(g);
                }
            }
            adam.step(&mut params.tensors, &grads)?;
        }
        let train_loss = loss_sum / samples.len() as f64;
        if !train_loss.is_finite() {
            return Err(Error::invalid(format!("training loss diverged at epoch {epoch}")));
        }

        let val_f1 = if val_refs.is_empty() {
            0.0
        } else {
            let probs = predict(&params, store, &val_refs, None)?;
            let labels: Vec<bool> = val_refs.iter().map(|&r| store.label(r)).collect();
            MetricsReport::from_probabilities(&labels, &probs)?.f1
        };
        let entry = EpochLog {
            epoch,
            train_loss,
            val_f1,
        };
        on_epoch(&entry);
        log.push(entry);

        // Without validation data the latest epoch is kept.
        if val_f1 > best.0 || val_refs.is_empty() {
            best = (val_f1, epoch, params.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    let (_, best_epoch, params) = best;
    Ok(TrainOutcome {
        params,
        best_epoch,
        log,
    })
}

/// Anomaly probabilities for `samples`, in order. With a blackout spec,
/// sample `i` gets its own mask seeded from the spec seed and `i`.
pub fn predict(
    params: &ModelParams,
    store: &SampleStore,
    samples: &[SampleRef],
    blackout: Option<&BlackoutSpec>,
) -> Result<Vec<f64>> {
    let masks: Vec<Option<BlackoutMask>> = samples
        .iter()
        .enumerate()
        .map(|(i, &(s, a))| match blackout {
            Some(spec) => {
                let f = &store.scenario(s).features;
                spec.mask(f.n_agents, f.horizon, a, derive_seed(spec.seed, i as u64)).map(Some)
            }
            None => Ok(None),
        })
        .collect::<Result<_>>()?;

    let mut by_scenario: Vec<(usize, Vec<usize>)> = Vec::new();
    let mut pos: HashMap<usize, usize> = HashMap::new();
    for (i, &(s, _)) in samples.iter().enumerate() {
        match pos.get(&s) {
            Some(&g) => by_scenario[g].1.push(i),
            None => {
                pos.insert(s, by_scenario.len());
                by_scenario.push((s, vec![i]));
            }
        }
    }
    let results: Vec<Vec<(usize, f64)>> = by_scenario
        .par_iter()
        .map(|(s, members)| {
            let mut g = Graph::new();
            let p = Bound::new(&mut g, params, false)?;
            let requests: Vec<EgoRequest<'_>> = members
                .iter()
                .map(|&i| EgoRequest {
                    ego: samples[i].1,
                    mask: masks[i].as_ref(),
                })
                .collect();
            let out = forward_group(&mut g, &p, &store.scenario(*s).features, &requests, None)?;
            Ok(members.iter().zip(out).map(|(&i, v)| (i, g.value(v).data()[0])).collect())
        })
        .collect::<Result<_>>()?;
    let mut probs = vec![f64::NAN; samples.len()];
    for (i, p) in results.into_iter().flatten() {
        probs[i] = p;
    }
    Ok(probs)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SamplePrediction {
    pub scenario_id: String,
    pub agent_id: String,
    pub label: u8,
    pub probability: f64,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub labels: Vec<bool>,
    pub predictions: Vec<SamplePrediction>,
}

impl Evaluation {
    pub fn probabilities(&self) -> Vec<f64> {
        self.predictions.iter().map(|p| p.probability).collect()
    }
}

pub fn evaluate(
    params: &ModelParams,
    store: &SampleStore,
    keys: &[SampleKey],
    blackout: Option<&BlackoutSpec>,
) -> Result<Evaluation> {
    if keys.is_empty() {
        return Err(Error::invalid("nothing to evaluate"));
    }
    let refs = store.resolve(keys)?;
    let probs = predict(params, store, &refs, blackout)?;
    let labels: Vec<bool> = refs.iter().map(|&r| store.label(r)).collect();
    let report = MetricsReport::from_probabilities(&labels, &probs)?;
    let predictions = keys
        .iter()
        .zip(&labels)
        .zip(&probs)
        .map(|(((sid, aid), &y), &p)| SamplePrediction {
            scenario_id: sid.clone(),
            agent_id: aid.clone(),
            label: y as u8,
            probability: p,
        })
        .collect();
    Ok(Evaluation {
        report,
        labels,
        predictions,
    })
}

fn csv_error(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| match e.into_kind() {
        csv::ErrorKind::Io(err) => Error::io(path, err),
        other => Error::invalid(format!("{other:?}")),
    }
}

/// Writes serializable rows with a header line.
pub fn write_csv<T: Serialize>(path: impl AsRef<Path>, rows: &[T]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(csv_error(path))?;
    for r in rows {
        w.serialize(r).map_err(csv_error(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads `(label, probability)` pairs from a per-sample prediction CSV.
pub fn read_predictions(path: impl AsRef<Path>) -> Result<(Vec<bool>, Vec<f64>)> {
    #[derive(serde::Deserialize)]
    struct Row {
        label: u8,
        probability: f64,
    }
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(csv_error(path))?;
    let (mut labels, mut probs) = (Vec::new(), Vec::new());
    for (i, row) in r.deserialize::<Row>().enumerate() {
        let row = row.map_err(|e| Error::Parse {
            line: i + 2,
            message: e.to_string(),
        })?;
        if row.label > 1 {
            return Err(Error::Parse {
                line: i + 2,
                message: format!("label {} is not 0 or 1", row.label),
            });
        }
        labels.push(row.label == 1);
        probs.push(row.probability);
    }
    Ok((labels, probs))
}
