//! Per-agent node features derived from sensor frames.
//!
//! Each sensor distance `d` becomes a proximity `1 − d / max_range`, so a ray
//! that hits nothing contributes 0 and closer returns are larger. Rows are
//! stored sparsely, agent-major (`agent · T + t`).

use std::sync::Arc;

use crate::autodiff::SparseRows;
use crate::error::{Error, Result};
use crate::scenario::{Scenario, SENSOR_DIM};

pub fn proximity(distance: f64, max_range: f64) -> f64 {
    (1.0 - distance / max_range).clamp(0.0, 1.0)
}

#[derive(Debug, Clone)]
pub struct ScenarioFeatures {
    pub scenario_id: String,
    pub n_agents: usize,
    pub horizon: usize,
    pub rows: Arc<SparseRows>,
}

impl ScenarioFeatures {
    pub fn from_scenario(scenario: &Scenario, max_range: f64) -> Result<Self> {
        if !(max_range > 0.0) {
            return Err(Error::invalid("max_range must be positive"));
        }
        let horizon = scenario.horizon();
        let mut rows = SparseRows::new(SENSOR_DIM);
        let mut buf = Vec::with_capacity(SENSOR_DIM);
        for agent in &scenario.agents {
            if agent.sensors.len() != horizon {
                return Err(Error::schema(format!(
                    "agent {} has {} sensor frames, expected {horizon}",
                    agent.agent_id,
                    agent.sensors.len()
                )));
            }
            for frame in &agent.sensors {
                buf.clear();
                buf.extend(frame.values().map(|d| proximity(d, max_range)));
                rows.push_dense(&buf)?;
            }
        }
        Ok(ScenarioFeatures {
            scenario_id: scenario.scenario_id.clone(),
            n_agents: scenario.agents.len(),
            horizon,
            rows: Arc::new(rows),
        })
    }

    pub fn row_index(&self, agent: usize, t: usize) -> usize {
        agent * self.horizon + t
    }

    /// Approximate heap footprint in bytes.
    pub fn heap_bytes(&self) -> usize {
        self.rows.nnz() * 6 + self.rows.rows() * 4
    }
}
