//! Ray casting for the three simulated range sensors.
//!
//! Ray layouts, all measured counter-clockwise from the agent heading:
//! - lidar: 240 rays at `i * 1.5°`, hitting other vehicles' footprints only;
//! - lane: 12 rays evenly spanning `[-60°, +60°]`, hitting every lane boundary;
//! - side: 12 rays at `i * 30°` (indices 3 and 9 are pure lateral), hitting
//!   the road edges (first and last boundary).

use std::f64::consts::PI;

use crate::scenario::{
    AgentState, Polyline, Scenario, SensorFrame, Vec2, LANE_RAYS, LIDAR_RAYS, SIDE_RAYS,
};

pub const VEHICLE_LENGTH: f64 = 4.5;
pub const VEHICLE_WIDTH: f64 = 2.0;

pub fn lidar_angle(i: usize) -> f64 {
    2.0 * PI * i as f64 / LIDAR_RAYS as f64
}

pub fn lane_ray_angle(i: usize) -> f64 {
    let half = PI / 3.0;
    -half + 2.0 * half * i as f64 / (LANE_RAYS - 1) as f64
}

pub fn side_ray_angle(i: usize) -> f64 {
    2.0 * PI * i as f64 / SIDE_RAYS as f64
}

/// Distance along a unit ray to a heading-aligned rectangle, or `None` on a
/// miss. A ray starting inside the rectangle returns zero.
pub fn ray_box(origin: Vec2, dir: Vec2, center: Vec2, heading: Vec2, length: f64, width: f64) -> Option<f64> {
    let rel = origin - center;
    let lateral = heading.perp();
    let o = [rel.dot(heading), rel.dot(lateral)];
    let d = [dir.dot(heading), dir.dot(lateral)];
    let half = [length / 2.0, width / 2.0];
    let mut t_enter = f64::NEG_INFINITY;
    let mut t_exit = f64::INFINITY;
    for axis in 0..2 {
        if d[axis] == 0.0 {
            if o[axis].abs() > half[axis] {
                return None;
            }
            continue;
        }
        let t1 = (-half[axis] - o[axis]) / d[axis];
        let t2 = (half[axis] - o[axis]) / d[axis];
        t_enter = t_enter.max(t1.min(t2));
        t_exit = t_exit.min(t1.max(t2));
    }
    if t_exit < t_enter.max(0.0) {
        return None;
    }
    Some(t_enter.max(0.0))
}

/// Distance along a unit ray to segment `a`-`b`, or `None` on a miss.
pub fn ray_segment(origin: Vec2, dir: Vec2, a: Vec2, b: Vec2) -> Option<f64> {
    let seg = b - a;
    let denom = dir.cross(seg);
    if denom == 0.0 {
        return None;
    }
    let ao = a - origin;
    let t = ao.cross(seg) / denom;
    let s = ao.cross(dir) / denom;
    (t >= 0.0 && (0.0..=1.0).contains(&s)).then_some(t)
}

fn ray_polylines<'a>(origin: Vec2, dir: Vec2, lines: impl Iterator<Item = &'a Polyline>, max_range: f64) -> f64 {
    let mut best = max_range;
    for line in lines {
        for w in line.windows(2) {
            if let Some(t) = ray_segment(origin, dir, w[0], w[1]) {
                best = best.min(t);
            }
        }
    }
    best
}

/// Sensor frame for `agents[index]` given every agent's state at one instant.
pub fn raycast_sensors(lanes: &[Polyline], agents: &[AgentState], index: usize, max_range: f64) -> SensorFrame {
    let me = &agents[index];
    let origin = me.position;
    let reach = max_range + 0.5 * VEHICLE_LENGTH.hypot(VEHICLE_WIDTH);
    let others: Vec<&AgentState> = agents
        .iter()
        .enumerate()
        .filter(|(j, a)| *j != index && (a.position - origin).norm() <= reach)
        .map(|(_, a)| a)
        .collect();

    let mut frame = SensorFrame::filled(max_range);
    for (i, out) in frame.lidar.iter_mut().enumerate() {
        let dir = me.heading.rotated(lidar_angle(i));
        for other in &others {
            if let Some(t) = ray_box(origin, dir, other.position, other.heading, VEHICLE_LENGTH, VEHICLE_WIDTH) {
                *out = out.min(t);
            }
        }
    }
    for (i, out) in frame.lane.iter_mut().enumerate() {
        let dir = me.heading.rotated(lane_ray_angle(i));
        *out = ray_polylines(origin, dir, lanes.iter(), max_range);
    }
    let edges: Vec<&Polyline> = match lanes {
        [] => vec![],
        [only] => vec![only],
        [first, .., last] => vec![first, last],
    };
    for (i, out) in frame.side.iter_mut().enumerate() {
        let dir = me.heading.rotated(side_ray_angle(i));
        *out = ray_polylines(origin, dir, edges.iter().copied(), max_range);
    }
    frame
}

/// Convenience wrapper over a stored scenario's geometry at step `t`.
pub fn scenario_sensors(scenario: &Scenario, index: usize, t: usize, max_range: f64) -> SensorFrame {
    let states: Vec<AgentState> = scenario.agents.iter().map(|a| a.states[t]).collect();
    raycast_sensors(&scenario.lane_geometry, &states, index, max_range)
}
