//! Domain types shared by every stage of the pipeline.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LIDAR_RAYS: usize = 240;
pub const LANE_RAYS: usize = 12;
pub const SIDE_RAYS: usize = 12;
/// Width of one perception vector: lidar, then lane, then side rays.
pub const SENSOR_DIM: usize = LIDAR_RAYS + LANE_RAYS + SIDE_RAYS;

/// Tolerance on the unit-norm invariant of stored headings.
pub const HEADING_NORM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn from_angle(theta: f64) -> Self {
        Vec2::new(theta.cos(), theta.sin())
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn cross(self, other: Vec2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn normalized(self) -> Option<Vec2> {
        let n = self.norm();
        (n > 0.0 && n.is_finite()).then(|| Vec2::new(self.x / n, self.y / n))
    }

    /// Counter-clockwise rotation by `angle` radians.
    pub fn rotated(self, angle: f64) -> Vec2 {
        let (s, c) = angle.sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    /// Left-hand perpendicular.
    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, rhs: f64) -> Vec2 {
        Vec2::new(self.x * rhs, self.y * rhs)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentState {
    pub position: Vec2,
    pub velocity: Vec2,
    /// Unit vector.
    pub heading: Vec2,
}

impl AgentState {
    /// State moving at `speed` along `heading` (normalized here).
    pub fn new(position: Vec2, heading: Vec2, speed: f64) -> Self {
        let heading = heading.normalized().unwrap_or(Vec2::new(1.0, 0.0));
        AgentState {
            position,
            velocity: heading * speed,
            heading,
        }
    }

    pub fn speed(&self) -> f64 {
        self.velocity.norm()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.position.is_finite() && self.velocity.is_finite() && self.heading.is_finite()) {
            return Err(Error::schema("agent state has non-finite component"));
        }
        if (self.heading.norm() - 1.0).abs() > HEADING_NORM_TOL {
            return Err(Error::schema(format!(
                "heading norm {} is not unit within {HEADING_NORM_TOL}",
                self.heading.norm()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorFrame {
    pub lidar: [f64; LIDAR_RAYS],
    pub lane: [f64; LANE_RAYS],
    pub side: [f64; SIDE_RAYS],
}

impl SensorFrame {
    /// Frame with every ray at `range` (nothing hit).
    pub fn filled(range: f64) -> Self {
        SensorFrame {
            lidar: [range; LIDAR_RAYS],
            lane: [range; LANE_RAYS],
            side: [range; SIDE_RAYS],
        }
    }

    pub fn from_slices(lidar: &[f64], lane: &[f64], side: &[f64]) -> Result<Self> {
        let check = |name: &str, v: &[f64], n: usize| {
            if v.len() != n {
                return Err(Error::schema(format!(
                    "{name} frame has {} rays, expected {n}",
                    v.len()
                )));
            }
            if let Some(bad) = v.iter().find(|x| !x.is_finite() || **x < 0.0) {
                return Err(Error::schema(format!("{name} ray distance {bad} out of range")));
            }
            Ok(())
        };
        check("lidar", lidar, LIDAR_RAYS)?;
        check("lane", lane, LANE_RAYS)?;
        check("side", side, SIDE_RAYS)?;
        let mut frame = SensorFrame::filled(0.0);
        frame.lidar.copy_from_slice(lidar);
        frame.lane.copy_from_slice(lane);
        frame.side.copy_from_slice(side);
        Ok(frame)
    }

    /// All rays in lidar, lane, side order.
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.lidar
            .iter()
            .chain(self.lane.iter())
            .chain(self.side.iter())
            .copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AnomalyType {
    Zigzag,
    SuddenBraking,
    SuddenTurn,
    LaneWeaving,
    Tailgating,
}

impl AnomalyType {
    pub const ALL: [AnomalyType; 5] = [
        AnomalyType::Zigzag,
        AnomalyType::SuddenBraking,
        AnomalyType::SuddenTurn,
        AnomalyType::LaneWeaving,
        AnomalyType::Tailgating,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AnomalyType::Zigzag => "Zigzag",
            AnomalyType::SuddenBraking => "SuddenBraking",
            AnomalyType::SuddenTurn => "SuddenTurn",
            AnomalyType::LaneWeaving => "LaneWeaving",
            AnomalyType::Tailgating => "Tailgating",
        }
    }
}

impl fmt::Display for AnomalyType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AnomalyType {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        AnomalyType::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::schema(format!("unknown anomaly type {s:?}")))
    }
}

/// Inclusive index range `[start, end]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Interval {
    pub start: usize,
    pub end: usize,
}

impl Interval {
    pub fn new(start: usize, end: usize) -> Self {
        debug_assert!(start <= end);
        Interval { start, end }
    }

    /// Number of indices covered (always at least one).
    #[allow(clippy::len_without_is_empty)]
    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn overlaps(&self, other: &Interval) -> bool {
        self.start <= other.end && other.start <= self.end
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AnomalyReport {
    pub is_anomalous: bool,
    pub intervals: BTreeMap<AnomalyType, Vec<Interval>>,
}

impl AnomalyReport {
    /// Builds a report from per-type detector output; empty lists are dropped.
    pub fn from_detections(detections: impl IntoIterator<Item = (AnomalyType, Vec<Interval>)>) -> Self {
        let intervals: BTreeMap<_, _> = detections
            .into_iter()
            .filter(|(_, iv)| !iv.is_empty())
            .collect();
        AnomalyReport {
            is_anomalous: !intervals.is_empty(),
            intervals,
        }
    }

    pub fn normal() -> Self {
        AnomalyReport::default()
    }

    pub fn types(&self) -> impl Iterator<Item = AnomalyType> + '_ {
        self.intervals.keys().copied()
    }

    pub fn has(&self, kind: AnomalyType) -> bool {
        self.intervals.contains_key(&kind)
    }

    pub fn validate(&self, len: usize) -> Result<()> {
        if self.is_anomalous == self.intervals.is_empty() {
            return Err(Error::schema("anomalous flag disagrees with type set"));
        }
        for (kind, ivs) in &self.intervals {
            if ivs.is_empty() {
                return Err(Error::schema(format!("type {kind} listed with no intervals")));
            }
            if ivs.iter().any(|iv| iv.start > iv.end || iv.end >= len) {
                return Err(Error::schema(format!("interval for {kind} outside [0, {len})")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentTrajectory {
    pub agent_id: String,
    pub states: Vec<AgentState>,
    pub sensors: Vec<SensorFrame>,
    pub lane_cross_flags: Vec<bool>,
    pub label: Option<AnomalyReport>,
}

impl AgentTrajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn headings(&self) -> Vec<Vec2> {
        self.states.iter().map(|s| s.heading).collect()
    }

    pub fn speeds(&self) -> Vec<f64> {
        self.states.iter().map(AgentState::speed).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.states.len();
        if t < 2 {
            return Err(Error::schema(format!("agent {} has {t} steps, need >= 2", self.agent_id)));
        }
        if self.sensors.len() != t || self.lane_cross_flags.len() != t {
            return Err(Error::schema(format!(
                "agent {}: series lengths differ (states {t}, sensors {}, lane_cross {})",
                self.agent_id,
                self.sensors.len(),
                self.lane_cross_flags.len()
            )));
        }
        for s in &self.states {
            s.validate()?;
        }
        if let Some(label) = &self.label {
            label.validate(t)?;
        }
        Ok(())
    }
}

pub type Polyline = Vec<Vec2>;

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub scenario_id: String,
    pub dt: f64,
    pub agents: Vec<AgentTrajectory>,
    /// Lane boundaries ordered across the road; the first and last are the road edges.
    pub lane_geometry: Vec<Polyline>,
}

impl Scenario {
    /// Number of timesteps shared by all agents.
    pub fn horizon(&self) -> usize {
        self.agents.first().map_or(0, AgentTrajectory::len)
    }

    pub fn agent_index(&self, agent_id: &str) -> Option<usize> {
        self.agents.iter().position(|a| a.agent_id == agent_id)
    }

    pub fn is_labeled(&self) -> bool {
        self.agents.iter().all(|a| a.label.is_some())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::schema(format!("dt must be positive, got {}", self.dt)));
        }
        if self.agents.is_empty() {
            return Err(Error::schema("scenario has no agents"));
        }
        let t = self.horizon();
        for a in &self.agents {
            a.validate()?;
            if a.len() != t {
                return Err(Error::schema(format!(
                    "agent {} has {} steps, scenario has {t}",
                    a.agent_id,
                    a.len()
                )));
            }
        }
        if self
            .lane_geometry
            .iter()
            .flatten()
            .any(|p| !p.is_finite())
        {
            return Err(Error::schema("lane geometry has non-finite vertex"));
        }
        Ok(())
    }
}
