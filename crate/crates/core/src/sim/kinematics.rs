use crate::scenario::{AgentState, Vec2};

/// One unicycle integration step.
///
/// Speed is clamped at zero, the heading is rotated by `yaw_rate * dt` and
/// renormalized, and the position advances with the *updated* speed and
/// heading. A zero rotation leaves the heading bits untouched.
pub fn step_unicycle(state: &AgentState, accel: f64, yaw_rate: f64, dt: f64) -> AgentState {
    debug_assert!(dt > 0.0);
    let speed = (state.speed() + accel * dt).max(0.0);
    let turn = yaw_rate * dt;
    let heading = if turn == 0.0 {
        state.heading
    } else {
        state
            .heading
            .rotated(turn)
            .normalized()
            .unwrap_or(state.heading)
    };
    let velocity = heading * speed;
    AgentState {
        position: state.position + velocity * dt,
        velocity,
        heading,
    }
}

/// Heading angle relative to the +x road axis.
pub fn heading_angle(heading: Vec2) -> f64 {
    heading.y.atan2(heading.x)
}
