//! Checks shared by the module tests and the acceptance run. Each returns
//! the failures it found (empty when everything holds) or a worst-case
//! measurement.

use std::sync::Arc;

use cpad::autodiff::{gradient_check, Graph, SparseRows, Tensor, Var, LEAKY_SLOPE};
use cpad::blackout::{BlackoutMask, BlackoutMode, BlackoutSpec};
use cpad::gat::{fuse_view, graph_embed, Bound, EgoView, SharedProjection};
use cpad::model::{Hyperparams, ModelParams};
use cpad::scenario::SENSOR_DIM;
use cpad::temporal::{encode_sequence, forward, forward_group, head, EgoRequest, Trace};
use cpad::Result;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{random_features, reorder_agents, tiny_hyper};

pub const EPS: f64 = 1e-5;
pub const TOL: f64 = 1e-4;
/// Gradient magnitude below which primitive checks compare absolutely.
pub const FLOOR: f64 = 1e-6;
/// Central differences at ε = 1e-5 carry about 1e-10 of rounding noise on a
/// loss of order one, so full-model entries smaller than this are compared
/// absolutely.
pub const FULL_FLOOR: f64 = 1e-5;

pub fn random_tensor(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    // Keep entries away from the kinks of relu and leaky relu.
    let data = (0..r * c)
        .map(|_| {
            let v: f64 = rng.random_range(0.05..1.5);
            if rng.random_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::matrix(r, c, data).unwrap()
}

/// Reduces any tensor to a scalar with fixed, non-uniform weights so every
/// output entry contributes a distinct gradient.
pub fn weighted_sum(g: &mut Graph, x: Var) -> Result<Var> {
    let shape = g.value(x).shape().to_vec();
    let n: usize = shape.iter().product();
    let w = Tensor::new(shape, (0..n).map(|i| 0.3 + 0.17 * (i % 7) as f64).collect())?;
    let w = g.constant(w)?;
    let p = g.mul(x, w)?;
    g.sum(p, None)
}

type Primitive = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var> + Sync>;

/// Every differentiable primitive with the input shapes it is checked at.
pub fn primitives() -> Vec<(&'static str, Vec<(usize, usize)>, Primitive)> {
    let mut out: Vec<(&'static str, Vec<(usize, usize)>, Primitive)> = vec![
        ("matmul", vec![(3, 4), (4, 2)], Box::new(|g, v| g.matmul(v[0], v[1]))),
        ("add", vec![(3, 4), (3, 4)], Box::new(|g, v| g.add(v[0], v[1]))),
        ("sub", vec![(3, 4), (3, 4)], Box::new(|g, v| g.sub(v[0], v[1]))),
        ("mul", vec![(3, 4), (3, 4)], Box::new(|g, v| g.mul(v[0], v[1]))),
        ("scale", vec![(3, 4)], Box::new(|g, v| Ok(g.scale(v[0], -1.7)))),
        ("add_bias", vec![(3, 4), (1, 4)], Box::new(|g, v| g.add_bias(v[0], v[1]))),
        ("relu", vec![(3, 4)], Box::new(|g, v| Ok(g.relu(v[0])))),
        ("leaky_relu", vec![(3, 4)], Box::new(|g, v| Ok(g.leaky_relu(v[0], LEAKY_SLOPE)))),
        ("sigmoid", vec![(3, 4)], Box::new(|g, v| Ok(g.sigmoid(v[0])))),
        (
            "log",
            vec![(3, 4)],
            Box::new(|g, v| {
                let s = g.sigmoid(v[0]);
                Ok(g.log(s))
            }),
        ),
        ("softmax rows", vec![(3, 4)], Box::new(|g, v| g.softmax(v[0], 1))),
        ("softmax cols", vec![(3, 4)], Box::new(|g, v| g.softmax(v[0], 0))),
        ("concat rows", vec![(3, 4), (2, 4)], Box::new(|g, v| g.concat(&[v[0], v[1]], 0))),
        ("concat cols", vec![(3, 4), (3, 2)], Box::new(|g, v| g.concat(&[v[0], v[1]], 1))),
        ("transpose", vec![(3, 4)], Box::new(|g, v| g.transpose(v[0]))),
        ("slice rows", vec![(3, 4)], Box::new(|g, v| g.slice(v[0], 0, 1, 2))),
        ("slice cols", vec![(3, 4)], Box::new(|g, v| g.slice(v[0], 1, 1, 2))),
        (
            "gather_rows",
            vec![(3, 4)],
            Box::new(|g, v| g.gather_rows(v[0], Arc::new(vec![2, 0, 2, 1]))),
        ),
        (
            "segment_mean",
            vec![(3, 4)],
            Box::new(|g, v| g.segment_mean(v[0], Arc::new(vec![(0, 2), (2, 3)]))),
        ),
        ("layer_norm", vec![(3, 4), (1, 4), (1, 4)], Box::new(|g, v| g.layer_norm(v[0], v[1], v[2]))),
        (
            "graph_attention",
            vec![(5, 4), (2, 4)],
            Box::new(|g, v| g.graph_attention(v[0], v[1], 2, Arc::new(vec![(0, 3), (3, 4), (4, 5)]))),
        ),
        (
            "bce",
            vec![(3, 4)],
            Box::new(|g, v| {
                let p = g.sigmoid(v[0]);
                let labels: Vec<f64> = (0..12).map(|i| (i % 3 == 0) as u8 as f64).collect();
                g.bce(p, &labels, 3.0)
            }),
        ),
    ];
    for (name, axis) in [("sum all", None), ("sum rows", Some(0)), ("sum cols", Some(1))] {
        out.push((name, vec![(3, 4)], Box::new(move |g, v| g.sum(v[0], axis))));
    }
    for (name, axis) in [("mean all", None), ("mean rows", Some(0)), ("mean cols", Some(1))] {
        out.push((name, vec![(3, 4)], Box::new(move |g, v| g.mean(v[0], axis))));
    }
    out
}

/// Worst relative error of one primitive over `seeds`.
pub fn primitive_error(shapes: &[(usize, usize)], f: &Primitive, seeds: u64) -> f64 {
    (0..seeds)
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let inputs: Vec<Tensor> = shapes.iter().map(|&(r, c)| random_tensor(&mut rng, r, c)).collect();
            gradient_check(&inputs, EPS, FLOOR, |g, v| {
                let y = f(g, v)?;
                weighted_sum(g, y)
            })
            .unwrap()
        })
        .fold(0.0, f64::max)
}

/// Worst relative error of the sparse projection over `seeds`.
pub fn sparse_matmul_error(seeds: u64) -> f64 {
    (0..seeds)
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut x = SparseRows::new(4);
            for _ in 0..3 {
                let row: Vec<f64> = (0..4)
                    .map(|_| if rng.random_bool(0.5) { 0.0 } else { rng.random_range(-1.0..1.0f32) as f64 })
                    .collect();
                x.push_dense(&row).unwrap();
            }
            let x = Arc::new(x);
            let w = random_tensor(&mut rng, 4, 2);
            gradient_check(&[w], EPS, FLOOR, |g, v| {
                let y = g.sparse_matmul(x.clone(), v[0])?;
                weighted_sum(g, y)
            })
            .unwrap()
        })
        .fold(0.0, f64::max)
}

/// Toy configuration of the end-to-end gradient check.
pub fn toy() -> Hyperparams {
    Hyperparams {
        hidden: 8,
        gat_heads: 2,
        encoder_layers: 1,
        encoder_heads: 2,
        ..Hyperparams::default()
    }
}

/// Loss of one ego computed from dense node features, so that gradients
/// reach the sensor inputs. `x` holds agent-major rows with the ego bit last.
fn dense_loss(g: &mut Graph, p: &Bound, x: Var, n_agents: usize, horizon: usize, ego: usize, y: f64) -> Result<Var> {
    let mut steps = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let mut idx = vec![ego * horizon + t];
        idx.extend((0..n_agents).filter(|&a| a != ego).map(|a| a * horizon + t));
        let nodes = g.gather_rows(x, Arc::new(idx))?;
        steps.push(graph_embed(g, p, nodes)?);
    }
    let seq = g.concat(&steps, 0)?;
    let enc = encode_sequence(g, p, seq, None)?;
    let prob = head(g, p, enc, None)?;
    g.bce(prob, &[y], 3.0)
}

/// Full-model gradient check (2 agents, T = 6, hidden 8, 2 heads, 1 layer):
/// sensor inputs through the dense embedding, and every parameter through
/// the sparse shared-projection path used in training. Returns
/// `(seed, what, error)` for every check at or above the tolerance, plus the
/// worst error seen.
pub fn full_forward_failures(seeds: std::ops::Range<u64>) -> (Vec<String>, f64) {
    let (n_agents, horizon) = (2, 6);
    let results: Vec<(u64, f64, f64)> = seeds
        .into_par_iter()
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let params = ModelParams::init(Hyperparams {
                init_seed: seed,
                ..toy()
            })
            .unwrap();
            let features = random_features(&mut rng, n_agents, horizon, 0.3);
            let ego = rng.random_range(0..n_agents);
            let y = if rng.random_bool(0.5) { 1.0 } else { 0.0 };

            let mut x = Vec::with_capacity(n_agents * horizon * (SENSOR_DIM + 1));
            for a in 0..n_agents {
                for t in 0..horizon {
                    x.extend(features.rows.dense_row(features.row_index(a, t)));
                    x.push(if a == ego { 1.0 } else { 0.0 });
                }
            }
            let x = Tensor::matrix(n_agents * horizon, SENSOR_DIM + 1, x).unwrap();
            let dense = gradient_check(&[x], EPS, FULL_FLOOR, |g, v| {
                let p = Bound::new(g, &params, false)?;
                dense_loss(g, &p, v[0], n_agents, horizon, ego, y)
            })
            .unwrap();

            let hyper = params.hyper;
            let sparse = gradient_check(&params.tensors, EPS, FULL_FLOOR, |g, v| {
                let p = Bound { hyper, vars: v.to_vec() };
                let shared = SharedProjection::new(g, &p, &features)?;
                let view = EgoView::new(&features, ego, None)?;
                let fused = fuse_view(g, &p, shared, &view, None)?;
                let enc = encode_sequence(g, &p, fused, None)?;
                let prob = head(g, &p, enc, None)?;
                g.bce(prob, &[y], 3.0)
            })
            .unwrap();
            (seed, dense, sparse)
        })
        .collect();
    let mut failures = Vec::new();
    let mut worst: f64 = 0.0;
    for (seed, dense, sparse) in results {
        for (what, e) in [("inputs", dense), ("params", sparse)] {
            worst = worst.max(e);
            if !(e < TOL) {
                failures.push(format!("seed {seed} {what}: {e:e}"));
            }
        }
    }
    (failures, worst)
}

fn random_hyper(rng: &mut ChaCha8Rng) -> Hyperparams {
    let hidden = [4, 6, 8, 12][rng.random_range(0..4)];
    let divisors: Vec<usize> = (1..=hidden).filter(|h| hidden % h == 0 && *h <= 4).collect();
    Hyperparams {
        hidden,
        gat_heads: rng.random_range(1..=3),
        encoder_layers: rng.random_range(1..=2),
        encoder_heads: divisors[rng.random_range(0..divisors.len())],
        ffn_mult: rng.random_range(1..=4),
        init_seed: rng.random(),
        ..Hyperparams::default()
    }
}

fn row_deviation(data: &[f64], width: usize) -> f64 {
    data.chunks(width)
        .map(|row| {
            if row.iter().any(|&p| p < 0.0) {
                return f64::INFINITY;
            }
            (row.iter().sum::<f64>() - 1.0).abs()
        })
        .fold(0.0, f64::max)
}

/// Largest deviation from one of any GAT, encoder or pooling attention row
/// over `configs` random models, scenes and masks. Negative weights count as
/// an infinite deviation.
pub fn attention_row_deviation(configs: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..configs {
        let hp = random_hyper(&mut rng);
        let params = ModelParams::init(hp).unwrap();
        let n_agents = rng.random_range(1..=6);
        let horizon = rng.random_range(1..=10);
        let features = random_features(&mut rng, n_agents, horizon, 0.2);
        let ego = rng.random_range(0..n_agents);
        let mask = if n_agents > 1 && rng.random_bool(0.5) {
            let spec = BlackoutSpec {
                mode: if rng.random_bool(0.5) { BlackoutMode::RandomStepwise } else { BlackoutMode::Sequential },
                pct: rng.random_range(0.0..0.5),
                max_block: 3,
                seed: 0,
            };
            Some(spec.mask(n_agents, horizon, ego, rng.random()).unwrap())
        } else {
            None
        };

        let mut g = Graph::new();
        let p = Bound::new(&mut g, &params, false).unwrap();
        let mut trace = Trace::default();
        let req = [EgoRequest { ego, mask: mask.as_ref() }];
        forward_group(&mut g, &p, &features, &req, Some(&mut trace)).unwrap();

        let view = EgoView::new(&features, ego, mask.as_ref()).unwrap();
        assert_eq!(trace.fusion.gat.len(), 2);
        for &v in &trace.fusion.gat {
            let cache = g.attention_cache(v).expect("attention node");
            for (s, &(lo, hi)) in view.segments.iter().enumerate() {
                let m = hi - lo;
                for h in 0..hp.gat_heads {
                    worst = worst.max(row_deviation(cache.alpha_block(s, h, m), m));
                }
            }
        }
        assert_eq!(trace.encoder.len(), hp.encoder_layers * hp.encoder_heads);
        for &v in trace.encoder.iter().chain(&trace.pool) {
            worst = worst.max(row_deviation(g.value(v).data(), horizon));
        }
    }
    worst
}

/// Largest output change under random non-ego reorderings.
pub fn reorder_deviation(trials: u64, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for trial in 0..trials {
        let params = ModelParams::init(tiny_hyper(trial)).unwrap();
        let features = random_features(&mut rng, 6, 8, 0.2);
        let ego = rng.random_range(0..6);
        let mut order: Vec<usize> = (0..6).collect();
        order.shuffle(&mut rng);
        let new_ego = order.iter().position(|&a| a == ego).unwrap();
        let permuted = reorder_agents(&features, &order);
        let a = forward(&params, &features, ego, None).unwrap();
        let b = forward(&params, &permuted, new_ego, None).unwrap();
        worst = worst.max((a - b).abs());
    }
    worst
}

/// Trials in which masking an agent for every step does not reproduce, bit
/// for bit, the output with that agent deleted.
pub fn mask_delete_mismatches(trials: u64, seed: u64) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = Vec::new();
    for trial in 0..trials {
        let params = ModelParams::init(tiny_hyper(trial)).unwrap();
        let n = rng.random_range(2..=6);
        let features = random_features(&mut rng, n, 7, 0.2);
        let ego = rng.random_range(0..n);
        let gone = (ego + rng.random_range(1..n)) % n;

        let mut mask = BlackoutMask::none(n, 7, ego);
        mask.grid[gone] = vec![true; 7];
        let masked = forward(&params, &features, ego, Some(&mask)).unwrap();

        let keep: Vec<usize> = (0..n).filter(|&a| a != gone).collect();
        let reduced = reorder_agents(&features, &keep);
        let new_ego = keep.iter().position(|&a| a == ego).unwrap();
        let deleted = forward(&params, &reduced, new_ego, None).unwrap();
        if masked.to_bits() != deleted.to_bits() {
            bad.push(trial);
        }
    }
    bad
}
