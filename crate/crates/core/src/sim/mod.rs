//! Deterministic kinematic multi-agent scenario synthesis.
//!
//! Agents drive a straight multi-lane road along +x under unicycle
//! kinematics. Each agent independently receives an anomalous behaviour
//! script with probability `anomaly_fraction`. Sensors are ray cast against
//! the other vehicles and the lane geometry, and the stored label is the rule
//! labeler's verdict on the generated motion.

pub mod behavior;
pub mod kinematics;
pub mod raycast;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::KvConfig;
use crate::error::{Error, Result};
use crate::labeler::{label_scenario, LabelerConfig};
use crate::scenario::{AgentState, AgentTrajectory, AnomalyType, Polyline, Scenario, Vec2};

pub use behavior::{script_controls, BehaviorKind, BehaviorParams, BehaviorScript, ControlContext, Leader};
pub use kinematics::step_unicycle;
pub use raycast::{raycast_sensors, scenario_sensors, VEHICLE_LENGTH, VEHICLE_WIDTH};

/// Longitudinal extent of the generated lane polylines.
const ROAD_X_MIN: f64 = -500.0;
const ROAD_X_MAX: f64 = 2500.0;

#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    pub n_agents: usize,
    /// Steps per episode.
    pub horizon: usize,
    pub dt: f64,
    pub n_lanes: usize,
    pub lane_width: f64,
    pub max_range: f64,
    pub anomaly_fraction: f64,
    /// Probabilities in [`AnomalyType::ALL`] order.
    pub anomaly_type_weights: [f64; 5],
    pub seed: u64,
    /// Decimal places kept on sensor distances; `None` keeps full precision.
    pub sensor_decimals: Option<u32>,
    pub labeler: LabelerConfig,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n_agents: 6,
            horizon: 100,
            dt: 0.1,
            n_lanes: 3,
            lane_width: 3.5,
            max_range: 50.0,
            anomaly_fraction: 0.25,
            anomaly_type_weights: [0.2; 5],
            seed: 0,
            sensor_decimals: Some(3),
            labeler: LabelerConfig::default(),
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_agents == 0 {
            return Err(Error::Config("n_agents must be >= 1".into()));
        }
        if self.horizon < 2 {
            return Err(Error::Config("horizon must be >= 2".into()));
        }
        if !(self.dt > 0.0) || !(self.lane_width > 0.0) || !(self.max_range > 0.0) || self.n_lanes == 0 {
            return Err(Error::Config("dt, lane_width, max_range and n_lanes must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.anomaly_fraction) {
            return Err(Error::Config("anomaly_fraction must lie in [0, 1]".into()));
        }
        let sum: f64 = self.anomaly_type_weights.iter().sum();
        if self.anomaly_type_weights.iter().any(|w| !(*w >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "anomaly type weights must be nonnegative and sum to 1, got {sum}"
            )));
        }
        self.labeler.validate()
    }

    /// All anomalous agents draw `kind`.
    pub fn only(mut self, kind: AnomalyType) -> Self {
        self.anomaly_type_weights = AnomalyType::ALL.map(|t| if t == kind { 1.0 } else { 0.0 });
        self
    }

    pub fn apply(&mut self, kv: &mut KvConfig) -> Result<()> {
        kv.take_into("n_agents", &mut self.n_agents)?;
        kv.take_into("horizon", &mut self.horizon)?;
        kv.take_into("T", &mut self.horizon)?;
        kv.take_into("dt", &mut self.dt)?;
        kv.take_into("n_lanes", &mut self.n_lanes)?;
        kv.take_into("lane_width", &mut self.lane_width)?;
        kv.take_into("max_range", &mut self.max_range)?;
        kv.take_into("anomaly_fraction", &mut self.anomaly_fraction)?;
        kv.take_into("seed", &mut self.seed)?;
        for (i, t) in AnomalyType::ALL.iter().enumerate() {
            kv.take_into(&format!("weight_{t}"), &mut self.anomaly_type_weights[i])?;
        }
        let mut decimals: i64 = self.sensor_decimals.map_or(-1, i64::from);
        kv.take_into("sensor_decimals", &mut decimals)?;
        self.sensor_decimals = u32::try_from(decimals).ok();
        self.labeler.apply(kv)?;
        self.validate()
    }

    fn boundary(&self, k: usize) -> f64 {
        k as f64 * self.lane_width
    }

    fn lane_center(&self, lane: usize) -> f64 {
        (lane as f64 + 0.5) * self.lane_width
    }

    pub fn lane_geometry(&self) -> Vec<Polyline> {
        (0..=self.n_lanes)
            .map(|k| {
                let y = self.boundary(k);
                vec![Vec2::new(ROAD_X_MIN, y), Vec2::new(ROAD_X_MAX, y)]
            })
            .collect()
    }
}

/// Mixes a base seed and an index into an independent 64-bit seed.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generated scenario together with the scripts that drove it.
#[derive(Debug, Clone)]
pub struct SimOutput {
    pub scenario: Scenario,
    pub scripts: Vec<BehaviorScript>,
}

struct Spawn {
    lane: usize,
    x: f64,
    speed: f64,
}

/// Lays agents out on every other lane; tailgaters queue behind a leader.
fn place_agents(cfg: &GenConfig, scripts: &[BehaviorScript], rng: &mut impl Rng) -> Vec<Spawn> {
    let lanes: Vec<usize> = (0..cfg.n_lanes).step_by(2).collect();
    let mut queues: Vec<Vec<usize>> = vec![Vec::new(); lanes.len()];
    let (tail, lead): (Vec<usize>, Vec<usize>) =
        (0..scripts.len()).partition(|&i| scripts[i].kind == BehaviorKind::Tailgating);
    for (k, &i) in lead.iter().enumerate() {
        queues[k % lanes.len()].push(i);
    }
    for (k, &i) in tail.iter().enumerate() {
        queues[k % lanes.len()].push(i);
    }
    let mut spawns: Vec<Option<Spawn>> = (0..scripts.len()).map(|_| None).collect();
    for (q, queue) in queues.iter().enumerate() {
        let mut x = 80.0 + rng.random_range(-10.0..10.0) + if q % 2 == 1 { 15.0 } else { 0.0 };
        for (pos, &i) in queue.iter().enumerate() {
            if pos > 0 {
                x -= if scripts[i].kind == BehaviorKind::Tailgating {
                    rng.random_range(10.0..14.0)
                } else {
                    rng.random_range(25.0..35.0)
                };
            }
            spawns[i] = Some(Spawn {
                lane: lanes[q],
                x,
                speed: rng.random_range(8.0..15.0),
            });
        }
    }
    spawns.into_iter().map(|s| s.expect("every agent queued")).collect()
}

fn find_leader(states: &[AgentState], i: usize, lane_width: f64) -> Option<Leader> {
    let me = &states[i];
    states
        .iter()
        .enumerate()
        .filter(|(j, o)| {
            *j != i && (o.position.y - me.position.y).abs() < lane_width / 2.0 && o.position.x > me.position.x
        })
        .map(|(_, o)| Leader {
            gap: o.position.x - me.position.x - VEHICLE_LENGTH,
            speed: o.speed(),
        })
        .min_by(|a, b| a.gap.total_cmp(&b.gap))
}

/// True while the vehicle footprint overlaps an interior lane line.
pub fn straddles_lane_line(cfg: &GenConfig, state: &AgentState) -> bool {
    let psi = kinematics::heading_angle(state.heading);
    let half = 0.5 * VEHICLE_WIDTH * psi.cos().abs() + 0.5 * VEHICLE_LENGTH * psi.sin().abs();
    (1..cfg.n_lanes).any(|k| (state.position.y - cfg.boundary(k)).abs() < half)
}

fn quantize(v: f64, decimals: Option<u32>) -> f64 {
    match decimals {
        Some(d) => {
            let scale = 10f64.powi(d as i32);
            (v * scale).round() / scale
        }
        None => v,
    }
}

/// Draws one scenario; deterministic in `(cfg, scenario_seed)`.
pub fn simulate_scenario(cfg: &GenConfig, scenario_seed: u64) -> Result<SimOutput> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(scenario_seed);
    let kinds = WeightedIndex::new(cfg.anomaly_type_weights).map_err(|e| Error::Config(e.to_string()))?;

    let scripts: Vec<BehaviorScript> = (0..cfg.n_agents)
        .map(|_| {
            if rng.random::<f64>() < cfg.anomaly_fraction {
                let kind = BehaviorKind::from_anomaly(AnomalyType::ALL[kinds.sample(&mut rng)]);
                BehaviorScript::sample(kind, cfg.horizon, cfg.dt, &mut rng)
            } else {
                BehaviorScript::normal()
            }
        })
        .collect();
    let spawns = place_agents(cfg, &scripts, &mut rng);

    let road_mid = cfg.boundary(cfg.n_lanes) / 2.0;
    let mut states: Vec<AgentState> = spawns
        .iter()
        .map(|s| AgentState::new(Vec2::new(s.x, cfg.lane_center(s.lane)), Vec2::new(1.0, 0.0), s.speed))
        .collect();
    let mut history: Vec<Vec<AgentState>> = vec![Vec::with_capacity(cfg.horizon); cfg.n_agents];
    for t in 0..cfg.horizon {
        for (h, s) in history.iter_mut().zip(&states) {
            h.push(*s);
        }
        if t + 1 == cfg.horizon {
            break;
        }
        let controls: Vec<(f64, f64)> = (0..cfg.n_agents)
            .map(|i| {
                let home = cfg.lane_center(spawns[i].lane);
                let inward = if home <= road_mid { 1.0 } else { -1.0 };
                let inner_line = if inward > 0.0 {
                    cfg.boundary(spawns[i].lane + 1)
                } else {
                    cfg.boundary(spawns[i].lane)
                };
                let ctx = ControlContext {
                    t,
                    dt: cfg.dt,
                    state: states[i],
                    desired_speed: spawns[i].speed,
                    home_lane_center: home,
                    lane_width: cfg.lane_width,
                    inner_line,
                    inward,
                    leader: find_leader(&states, i, cfg.lane_width),
                    turn_threshold: cfg.labeler.turn_threshold,
                };
                script_controls(&scripts[i], &ctx, &mut rng)
            })
            .collect();
        for (s, (a, w)) in states.iter_mut().zip(controls) {
            *s = step_unicycle(s, a, w, cfg.dt);
        }
    }

    let lanes = cfg.lane_geometry();
    let mut agents: Vec<AgentTrajectory> = history
        .iter()
        .enumerate()
        .map(|(i, h)| AgentTrajectory {
            agent_id: format!("agent_{i}"),
            states: h.clone(),
            sensors: Vec::with_capacity(cfg.horizon),
            lane_cross_flags: h.iter().map(|s| straddles_lane_line(cfg, s)).collect(),
            label: None,
        })
        .collect();
    for t in 0..cfg.horizon {
        let snapshot: Vec<AgentState> = history.iter().map(|h| h[t]).collect();
        for (i, agent) in agents.iter_mut().enumerate() {
            let mut frame = raycast_sensors(&lanes, &snapshot, i, cfg.max_range);
            for v in frame.lidar.iter_mut().chain(frame.lane.iter_mut()).chain(frame.side.iter_mut()) {
                *v = quantize(*v, cfg.sensor_decimals).clamp(0.0, cfg.max_range);
            }
            agent.sensors.push(frame);
        }
    }

    let mut scenario = Scenario {
        scenario_id: format!("scn-{scenario_seed:016x}"),
        dt: cfg.dt,
        agents,
        lane_geometry: lanes,
    };
    label_scenario(&mut scenario, &cfg.labeler)?;
    Ok(SimOutput { scenario, scripts })
}

/// Scenario `index` of a dataset generated from `cfg.seed`.
pub fn generate_indexed(cfg: &GenConfig, index: usize) -> Result<SimOutput> {
    let mut out = simulate_scenario(cfg, derive_seed(cfg.seed, index as u64))?;
    out.scenario.scenario_id = format!("scn-{index:05}");
    Ok(out)
}
