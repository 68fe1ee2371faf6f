//! Scripted driving behaviours and their control laws.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::scenario::{AgentState, AnomalyType};
use crate::sim::kinematics::heading_angle;

/// Yaw-rate bound of the normal lane keeper, rad/s.
pub const NORMAL_YAW_LIMIT: f64 = 0.05;
/// Hardest deceleration any non-braking script commands, m/s².
pub const COMFORT_DECEL: f64 = -3.0;
const MAX_ACCEL: f64 = 1.5;
/// Duration of a scripted hard-braking phase, in steps.
pub const BRAKE_STEPS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BehaviorKind {
    Normal,
    Zigzag,
    SuddenBraking,
    SuddenTurn,
    LaneWeaving,
    Tailgating,
}

impl BehaviorKind {
    pub fn anomaly(self) -> Option<AnomalyType> {
        match self {
            BehaviorKind::Normal => None,
            BehaviorKind::Zigzag => Some(AnomalyType::Zigzag),
            BehaviorKind::SuddenBraking => Some(AnomalyType::SuddenBraking),
            BehaviorKind::SuddenTurn => Some(AnomalyType::SuddenTurn),
            BehaviorKind::LaneWeaving => Some(AnomalyType::LaneWeaving),
            BehaviorKind::Tailgating => Some(AnomalyType::Tailgating),
        }
    }

    pub fn from_anomaly(kind: AnomalyType) -> Self {
        match kind {
            AnomalyType::Zigzag => BehaviorKind::Zigzag,
            AnomalyType::SuddenBraking => BehaviorKind::SuddenBraking,
            AnomalyType::SuddenTurn => BehaviorKind::SuddenTurn,
            AnomalyType::LaneWeaving => BehaviorKind::LaneWeaving,
            AnomalyType::Tailgating => BehaviorKind::Tailgating,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BehaviorParams {
    None,
    Zigzag {
        duration: usize,
        /// Peak yaw rate, rad/s.
        yaw_amplitude: f64,
        /// Oscillation period, s.
        period: f64,
    },
    SuddenBraking {
        /// Commanded acceleration while braking, m/s² (negative).
        decel: f64,
    },
    SuddenTurn {
        /// Peak lateral acceleration as a multiple of the turn threshold.
        strength: f64,
        steps: usize,
    },
    LaneWeaving {
        duration: usize,
        /// Lateral amplitude around the lane line, m.
        amplitude: f64,
        period: f64,
    },
    Tailgating {
        /// Bumper-to-bumper gap the follower closes to, m.
        target_gap: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BehaviorScript {
    pub kind: BehaviorKind,
    /// Step index at which the scripted behaviour starts.
    pub onset: usize,
    pub params: BehaviorParams,
}

impl BehaviorScript {
    pub fn normal() -> Self {
        BehaviorScript {
            kind: BehaviorKind::Normal,
            onset: 0,
            params: BehaviorParams::None,
        }
    }

    /// Draws parameters for `kind` over a horizon of `horizon` steps.
    pub fn sample(kind: BehaviorKind, horizon: usize, dt: f64, rng: &mut impl Rng) -> Self {
        let frac = |a: f64, b: f64, rng: &mut dyn rand::RngCore| {
            let lo = (a * horizon as f64) as usize;
            let hi = ((b * horizon as f64) as usize).max(lo + 1);
            rng.random_range(lo..hi).min(horizon.saturating_sub(1))
        };
        let steps = |secs: f64| (secs / dt).round().max(1.0) as usize;
        let (onset, params) = match kind {
            BehaviorKind::Normal => (0, BehaviorParams::None),
            BehaviorKind::Zigzag => (
                frac(0.10, 0.30, rng),
                BehaviorParams::Zigzag {
                    duration: steps(rng.random_range(5.0..6.5)),
                    yaw_amplitude: rng.random_range(0.8..1.2),
                    period: rng.random_range(1.2..1.6),
                },
            ),
            BehaviorKind::SuddenBraking => (
                frac(0.15, 0.65, rng),
                BehaviorParams::SuddenBraking {
                    decel: rng.random_range(-8.0..-6.0),
                },
            ),
            BehaviorKind::SuddenTurn => (
                frac(0.15, 0.70, rng),
                BehaviorParams::SuddenTurn {
                    strength: rng.random_range(1.4..2.0),
                    steps: 3,
                },
            ),
            BehaviorKind::LaneWeaving => (
                frac(0.10, 0.35, rng),
                BehaviorParams::LaneWeaving {
                    duration: steps(rng.random_range(5.5..6.5)),
                    amplitude: rng.random_range(0.9..1.3),
                    period: rng.random_range(2.0..2.5),
                },
            ),
            BehaviorKind::Tailgating => (
                frac(0.0, 0.10, rng),
                BehaviorParams::Tailgating {
                    target_gap: rng.random_range(2.0..3.0),
                },
            ),
        };
        BehaviorScript { kind, onset, params }
    }

    /// Step range `[start, end)` over which the anomaly is actively driven.
    pub fn active_window(&self, horizon: usize) -> Option<(usize, usize)> {
        let end = match self.params {
            BehaviorParams::None => return None,
            BehaviorParams::Zigzag { duration, .. } | BehaviorParams::LaneWeaving { duration, .. } => {
                self.onset + duration
            }
            BehaviorParams::SuddenBraking { .. } => self.onset + BRAKE_STEPS,
            BehaviorParams::SuddenTurn { steps, .. } => self.onset + steps,
            BehaviorParams::Tailgating { .. } => horizon,
        };
        Some((self.onset, end.min(horizon)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Leader {
    /// Bumper-to-bumper gap, m.
    pub gap: f64,
    pub speed: f64,
}

/// Everything a control law may observe at one step.
#[derive(Debug, Clone, Copy)]
pub struct ControlContext {
    pub t: usize,
    pub dt: f64,
    pub state: AgentState,
    pub desired_speed: f64,
    pub home_lane_center: f64,
    pub lane_width: f64,
    /// Lane line between the home lane and the road centre.
    pub inner_line: f64,
    /// +1 when the road centre lies at larger y than the home lane.
    pub inward: f64,
    pub leader: Option<Leader>,
    /// Turn threshold of the labeler, m/s².
    pub turn_threshold: f64,
}

fn cruise(ctx: &ControlContext) -> f64 {
    let v = ctx.state.speed();
    let mut a = 0.5 * (ctx.desired_speed - v);
    if let Some(l) = ctx.leader {
        let desired_gap = 4.0 + 1.5 * v;
        a = a.min(0.25 * (l.gap - desired_gap) + 0.6 * (l.speed - v));
    }
    a.clamp(COMFORT_DECEL, MAX_ACCEL)
}

/// Steers toward lateral reference `y_ref` moving at `vy_ref`.
fn lane_keep(ctx: &ControlContext, y_ref: f64, vy_ref: f64, yaw_limit: f64) -> f64 {
    let v = ctx.state.speed().max(1.0);
    let err = y_ref - ctx.state.position.y;
    let lateral = vy_ref + 0.8 * err;
    let psi_des = (lateral / v).clamp(-0.4, 0.4).asin();
    let psi = heading_angle(ctx.state.heading);
    (3.0 * (psi_des - psi)).clamp(-yaw_limit, yaw_limit)
}

fn accel_noise(rng: &mut impl Rng) -> f64 {
    let n: Normal<f64> = Normal::new(0.0, 0.15).expect("valid sigma");
    n.sample(rng).clamp(-0.4, 0.4)
}

/// Acceleration (m/s²) and yaw rate (rad/s) commanded by `script` at `ctx.t`.
///
/// Normal driving holds its lane with yaw rate bounded by
/// [`NORMAL_YAW_LIMIT`]; its noise enters the longitudinal channel only.
pub fn script_controls(script: &BehaviorScript, ctx: &ControlContext, rng: &mut impl Rng) -> (f64, f64) {
    let noise = accel_noise(rng);
    let normal_accel = (cruise(ctx) + noise).clamp(COMFORT_DECEL, MAX_ACCEL);
    let home = ctx.home_lane_center;
    let normal_yaw = lane_keep(ctx, home, 0.0, NORMAL_YAW_LIMIT);
    let t = ctx.t;
    if t < script.onset {
        return (normal_accel, normal_yaw);
    }
    let since = (t - script.onset) as f64 * ctx.dt;
    match script.params {
        BehaviorParams::None => (normal_accel, normal_yaw),
        BehaviorParams::Zigzag {
            duration,
            yaw_amplitude,
            period,
        } => {
            if t < script.onset + duration {
                let yaw = yaw_amplitude * (2.0 * PI * since / period).cos();
                (normal_accel, yaw)
            } else {
                (normal_accel, lane_keep(ctx, home, 0.0, 0.3))
            }
        }
        BehaviorParams::SuddenBraking { decel } => {
            let k = t - script.onset;
            if k < BRAKE_STEPS {
                (decel, normal_yaw)
            } else if k < 2 * BRAKE_STEPS {
                (0.0, normal_yaw)
            } else {
                (normal_accel, normal_yaw)
            }
        }
        BehaviorParams::SuddenTurn { strength, steps } => {
            let target = home + ctx.inward * ctx.lane_width;
            if t < script.onset + steps {
                let v = ctx.state.speed().max(1.0);
                let yaw = ctx.inward * strength * ctx.turn_threshold / (v * ctx.dt);
                (0.0, yaw)
            } else {
                (normal_accel, lane_keep(ctx, target, 0.0, 0.6))
            }
        }
        BehaviorParams::LaneWeaving {
            duration,
            amplitude,
            period,
        } => {
            if t < script.onset + duration {
                let ramp = since.min(1.0);
                let omega = 2.0 * PI / period;
                let y_ref = home + (ctx.inner_line - home) * ramp + amplitude * ramp * (omega * since).sin();
                let vy_ref = amplitude * ramp * omega * (omega * since).cos();
                (normal_accel, lane_keep(ctx, y_ref, vy_ref, 1.0))
            } else {
                (normal_accel, lane_keep(ctx, home, 0.0, 0.3))
            }
        }
        BehaviorParams::Tailgating { target_gap } => match ctx.leader {
            Some(l) => {
                let v = ctx.state.speed();
                let a = 0.8 * (l.gap - target_gap) + 1.2 * (l.speed - v);
                (a.clamp(-3.5, 3.0), normal_yaw)
            }
            None => (normal_accel, normal_yaw),
        },
    }
}
