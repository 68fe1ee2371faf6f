//! Rule-based trajectory anomaly detectors and the aggregate labeler.
//!
//! Every detector returns the contiguous index intervals on which its rule
//! fires; an empty list means the rule did not fire. Series that need a full
//! finite-difference stencil are zero-filled where the stencil is incomplete,
//! so all series keep the trajectory length.

use crate::config::KvConfig;
use crate::error::{Error, Result};
use crate::scenario::{AgentTrajectory, AnomalyReport, AnomalyType, Interval, Scenario, Vec2, LIDAR_RAYS};

/// Floor on the curvature denominator.
const CURVATURE_FLOOR: f64 = 1e-12;
/// Half-angle of the forward lidar cone used as the proximity detector.
pub const FORWARD_CONE_HALF_DEG: f64 = 30.0;

#[derive(Debug, Clone, PartialEq)]
pub struct LabelerConfig {
    /// Samples spanned by the second-derivative stencil of the curvature rule.
    pub zigzag_window: usize,
    pub zigzag_k_threshold: f64,
    pub braking_window: usize,
    /// Braking threshold in m/s² (negative).
    pub braking_threshold: f64,
    /// Lateral acceleration threshold in m/s².
    pub turn_threshold: f64,
    pub lane_ma_window: usize,
    /// Minimum interval length (exclusive) for a lane-straddling anomaly, in samples.
    pub lane_interval_threshold: usize,
    /// Forward proximity threshold in metres.
    pub tail_distance: f64,
    pub tail_min_duration: usize,
}

impl Default for LabelerConfig {
    fn default() -> Self {
        LabelerConfig {
            zigzag_window: 40,
            zigzag_k_threshold: 0.5,
            braking_window: 5,
            braking_threshold: -4.0,
            turn_threshold: 0.8,
            lane_ma_window: 11,
            lane_interval_threshold: 10,
            tail_distance: 6.0,
            tail_min_duration: 10,
        }
    }
}

impl LabelerConfig {
    pub fn validate(&self) -> Result<()> {
        let odd = |name: &str, w: usize| {
            if w < 3 || w % 2 == 0 {
                Err(Error::Config(format!("{name} must be odd and >= 3, got {w}")))
            } else {
                Ok(())
            }
        };
        odd("braking_window", self.braking_window)?;
        odd("lane_ma_window", self.lane_ma_window)?;
        if self.zigzag_window < 4 {
            return Err(Error::Config(format!(
                "zigzag_window must be >= 4, got {}",
                self.zigzag_window
            )));
        }
        if !(self.braking_threshold < 0.0) {
            return Err(Error::Config("braking_threshold must be negative".into()));
        }
        if !(self.turn_threshold > 0.0) {
            return Err(Error::Config("turn_threshold must be positive".into()));
        }
        if !(self.tail_distance > 0.0) || self.tail_min_duration == 0 {
            return Err(Error::Config("tailgating thresholds must be positive".into()));
        }
        Ok(())
    }

    /// Overrides fields from a key/value config; keys are the field names.
    pub fn apply(&mut self, kv: &mut KvConfig) -> Result<()> {
        kv.take_into("zigzag_window", &mut self.zigzag_window)?;
        kv.take_into("zigzag_k_threshold", &mut self.zigzag_k_threshold)?;
        kv.take_into("braking_window", &mut self.braking_window)?;
        kv.take_into("braking_threshold", &mut self.braking_threshold)?;
        kv.take_into("turn_threshold", &mut self.turn_threshold)?;
        kv.take_into("lane_ma_window", &mut self.lane_ma_window)?;
        kv.take_into("lane_interval_threshold", &mut self.lane_interval_threshold)?;
        kv.take_into("tail_distance", &mut self.tail_distance)?;
        kv.take_into("tail_min_duration", &mut self.tail_min_duration)?;
        self.validate()
    }
}

/// Indices where `series[i] > threshold` (strict).
pub fn indices_above(series: &[f64], threshold: f64) -> Vec<usize> {
    series
        .iter()
        .enumerate()
        .filter(|(_, v)| **v > threshold)
        .map(|(i, _)| i)
        .collect()
}

/// Indices where `series[i] < threshold` (strict).
pub fn indices_below(series: &[f64], threshold: f64) -> Vec<usize> {
    series
        .iter()
        .enumerate()
        .filter(|(_, v)| **v < threshold)
        .map(|(i, _)| i)
        .collect()
}

/// Maximal runs of consecutive integers in a sorted, duplicate-free index set.
pub fn contiguous_intervals(indices: &[usize]) -> Vec<Interval> {
    let mut out: Vec<Interval> = Vec::new();
    for &i in indices {
        match out.last_mut() {
            Some(iv) if iv.end + 1 == i => iv.end = i,
            _ => out.push(Interval::new(i, i)),
        }
    }
    out
}

/// Central difference with half-offset `s` samples; zero where out of reach.
fn central_difference(f: &[f64], valid: &[bool], s: usize, dt: f64) -> (Vec<f64>, Vec<bool>) {
    let n = f.len();
    let mut d = vec![0.0; n];
    let mut ok = vec![false; n];
    for i in s..n.saturating_sub(s) {
        if valid[i - s] && valid[i + s] {
            d[i] = (f[i + s] - f[i - s]) / (2.0 * s as f64 * dt);
            ok[i] = true;
        }
    }
    (d, ok)
}

/// Curvature of the heading-component trajectory,
/// `k = |θx'θy'' − θy'θx''| / (θx'² + θy'²)^{3/2}`.
///
/// First derivatives use central differences with half-offset `window / 4`
/// samples; second derivatives repeat the stencil on the first derivatives, so
/// one value spans `window + 1` samples. Indices without a full stencil get 0.
pub fn curvature_series(headings: &[Vec2], window: usize, dt: f64) -> Result<Vec<f64>> {
    if window < 4 {
        return Err(Error::invalid(format!("curvature window {window} is below 4")));
    }
    if headings.len() < window + 2 {
        return Err(Error::invalid(format!(
            "curvature needs at least {} samples, got {}",
            window + 2,
            headings.len()
        )));
    }
    let s = window / 4;
    let xs: Vec<f64> = headings.iter().map(|h| h.x).collect();
    let ys: Vec<f64> = headings.iter().map(|h| h.y).collect();
    let all = vec![true; headings.len()];
    let (dx, okx) = central_difference(&xs, &all, s, dt);
    let (dy, _) = central_difference(&ys, &all, s, dt);
    let (ddx, ok2) = central_difference(&dx, &okx, s, dt);
    let (ddy, _) = central_difference(&dy, &okx, s, dt);
    Ok((0..headings.len())
        .map(|i| {
            if !ok2[i] {
                return 0.0;
            }
            let num = (dx[i] * ddy[i] - dy[i] * ddx[i]).abs();
            let den = (dx[i] * dx[i] + dy[i] * dy[i]).powf(1.5).max(CURVATURE_FLOOR);
            num / den
        })
        .collect())
}

pub fn detect_zigzag(traj: &AgentTrajectory, dt: f64, cfg: &LabelerConfig) -> Result<Vec<Interval>> {
    let k = curvature_series(&traj.headings(), cfg.zigzag_window, dt)?;
    Ok(contiguous_intervals(&indices_above(&k, cfg.zigzag_k_threshold)))
}

/// Smoothed longitudinal acceleration in m/s².
///
/// `A_i` is the speed difference across the centred window `i ± (w-1)/2`
/// divided by the elapsed time of that window; `SA_i` is the centred
/// `w`-sample moving average of `A`. Incomplete stencils give 0.
pub fn smoothed_acceleration(speeds: &[f64], w: usize, dt: f64) -> Result<Vec<f64>> {
    if w % 2 == 0 || w < 3 {
        return Err(Error::invalid(format!("smoothing window must be odd and >= 3, got {w}")));
    }
    if speeds.len() < 2 * w {
        return Err(Error::invalid(format!(
            "smoothed acceleration needs at least {} samples, got {}",
            2 * w,
            speeds.len()
        )));
    }
    let n = speeds.len();
    let r = (w - 1) / 2;
    let span = 2.0 * r as f64 * dt;
    let mut accel = vec![0.0; n];
    for i in r..n - r {
        accel[i] = (speeds[i + r] - speeds[i - r]) / span;
    }
    let mut sa = vec![0.0; n];
    for i in 2 * r..n - 2 * r {
        sa[i] = accel[i - r..=i + r].iter().sum::<f64>() / w as f64;
    }
    Ok(sa)
}

pub fn detect_sudden_braking(traj: &AgentTrajectory, dt: f64, cfg: &LabelerConfig) -> Result<Vec<Interval>> {
    let sa = smoothed_acceleration(&traj.speeds(), cfg.braking_window, dt)?;
    Ok(contiguous_intervals(&indices_below(&sa, cfg.braking_threshold)))
}

/// Per-frame heading change in radians; the first entry is 0.
pub fn angular_change_series(headings: &[Vec2]) -> Result<Vec<f64>> {
    if headings.len() < 2 {
        return Err(Error::invalid("angular change needs at least two headings"));
    }
    let units = headings
        .iter()
        .enumerate()
        .map(|(i, h)| {
            h.normalized()
                .ok_or_else(|| Error::invalid(format!("heading {i} has zero length")))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = vec![0.0; headings.len()];
    for i in 1..units.len() {
        out[i] = units[i - 1].dot(units[i]).clamp(-1.0, 1.0).acos();
    }
    Ok(out)
}

/// `a_lat,i = Δθ_i · v_{i+1}`; the last frame has no successor and gets 0.
pub fn lateral_acceleration(dtheta: &[f64], speeds: &[f64]) -> Vec<f64> {
    let n = dtheta.len().min(speeds.len());
    (0..n)
        .map(|i| if i + 1 < n { dtheta[i] * speeds[i + 1] } else { 0.0 })
        .collect()
}

pub fn detect_sudden_turns(traj: &AgentTrajectory, cfg: &LabelerConfig) -> Result<Vec<Interval>> {
    let dtheta = angular_change_series(&traj.headings())?;
    let alat: Vec<f64> = lateral_acceleration(&dtheta, &traj.speeds())
        .into_iter()
        .map(f64::abs)
        .collect();
    Ok(contiguous_intervals(&indices_above(&alat, cfg.turn_threshold)))
}

/// Centred moving average with a ones kernel and zero padding.
pub fn moving_average(data: &[f64], w: usize) -> Result<Vec<f64>> {
    if w % 2 == 0 || w == 0 {
        return Err(Error::invalid(format!("moving-average window must be odd, got {w}")));
    }
    if w > data.len() {
        return Err(Error::invalid(format!(
            "moving-average window {w} exceeds series length {}",
            data.len()
        )));
    }
    let r = (w - 1) / 2;
    let n = data.len();
    Ok((0..n)
        .map(|i| {
            let lo = i.saturating_sub(r);
            let hi = (i + r).min(n - 1);
            data[lo..=hi].iter().sum::<f64>() / w as f64
        })
        .collect())
}

pub fn detect_lane_weaving(traj: &AgentTrajectory, cfg: &LabelerConfig) -> Result<Vec<Interval>> {
    let flags: Vec<f64> = traj
        .lane_cross_flags
        .iter()
        .map(|&b| if b { 1.0 } else { 0.0 })
        .collect();
    let m = moving_average(&flags, cfg.lane_ma_window)?;
    Ok(contiguous_intervals(&indices_above(&m, 0.5))
        .into_iter()
        .filter(|iv| iv.len() > cfg.lane_interval_threshold)
        .collect())
}

/// Whether lidar ray `i` lies inside the forward proximity cone.
pub fn in_forward_cone(i: usize) -> bool {
    let step = 360.0 / LIDAR_RAYS as f64;
    let k = i.min(LIDAR_RAYS - i);
    k as f64 * step <= FORWARD_CONE_HALF_DEG + 1e-9
}

/// Minimum lidar distance over the forward cone, per step.
pub fn forward_proximity(traj: &AgentTrajectory) -> Vec<f64> {
    traj.sensors
        .iter()
        .map(|f| {
            f.lidar
                .iter()
                .enumerate()
                .filter(|(i, _)| in_forward_cone(*i))
                .map(|(_, d)| *d)
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

pub fn detect_tailgating(traj: &AgentTrajectory, cfg: &LabelerConfig) -> Vec<Interval> {
    let prox = forward_proximity(traj);
    contiguous_intervals(&indices_below(&prox, cfg.tail_distance))
        .into_iter()
        .filter(|iv| iv.len() >= cfg.tail_min_duration)
        .collect()
}

pub fn label_trajectory(traj: &AgentTrajectory, dt: f64, cfg: &LabelerConfig) -> Result<AnomalyReport> {
    Ok(AnomalyReport::from_detections([
        (AnomalyType::Zigzag, detect_zigzag(traj, dt, cfg)?),
        (AnomalyType::SuddenBraking, detect_sudden_braking(traj, dt, cfg)?),
        (AnomalyType::SuddenTurn, detect_sudden_turns(traj, cfg)?),
        (AnomalyType::LaneWeaving, detect_lane_weaving(traj, cfg)?),
        (AnomalyType::Tailgating, detect_tailgating(traj, cfg)),
    ]))
}

/// Replaces every agent's label with the rule output.
pub fn label_scenario(scenario: &mut Scenario, cfg: &LabelerConfig) -> Result<()> {
    let dt = scenario.dt;
    for agent in &mut scenario.agents {
        agent.label = Some(label_trajectory(agent, dt, cfg)?);
    }
    Ok(())
}
