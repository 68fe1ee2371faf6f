#![allow(dead_code)]

pub mod checks;

use std::sync::Arc;

use cpad::autodiff::SparseRows;
use cpad::features::ScenarioFeatures;
use cpad::model::Hyperparams;
use cpad::scenario::SENSOR_DIM;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Small model used where the default width would only slow tests down.
pub fn tiny_hyper(seed: u64) -> Hyperparams {
    Hyperparams {
        hidden: 8,
        gat_heads: 2,
        encoder_layers: 1,
        encoder_heads: 2,
        init_seed: seed,
        ..Hyperparams::default()
    }
}

/// Sparse proximity rows with roughly `density` nonzeros, agent-major.
pub fn random_features(rng: &mut ChaCha8Rng, n_agents: usize, horizon: usize, density: f64) -> ScenarioFeatures {
    let mut rows = SparseRows::new(SENSOR_DIM);
    for _ in 0..n_agents * horizon {
        let row: Vec<f64> = (0..SENSOR_DIM)
            .map(|_| {
                if rng.random_bool(density) {
                    rng.random_range(0.05..1.0f32) as f64
                } else {
                    0.0
                }
            })
            .collect();
        rows.push_dense(&row).unwrap();
    }
    ScenarioFeatures {
        scenario_id: "synthetic".into(),
        n_agents,
        horizon,
        rows: Arc::new(rows),
    }
}

/// Features with the agents reordered: new agent `i` is old agent `order[i]`.
pub fn reorder_agents(f: &ScenarioFeatures, order: &[usize]) -> ScenarioFeatures {
    let mut rows = SparseRows::new(f.rows.cols());
    for &a in order {
        for t in 0..f.horizon {
            rows.push_dense(&f.rows.dense_row(f.row_index(a, t))).unwrap();
        }
    }
    ScenarioFeatures {
        scenario_id: f.scenario_id.clone(),
        n_agents: order.len(),
        horizon: f.horizon,
        rows: Arc::new(rows),
    }
}
