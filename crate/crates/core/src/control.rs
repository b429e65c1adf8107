//! Low-level unicycle controllers: single-integrator command projection and
//! a point tracker.

use serde::{Deserialize, Serialize};

use crate::dynamics::{wrap_angle, ControlInput, DynamicsError, RobotState};

/// Parameters of the offset-point (near-identity) map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SiToUniParams {
    /// Distance ℓ of the controlled point ahead of the wheel axis, meters.
    pub lookahead: f64,
    pub v_max: f64,
    pub omega_max: f64,
}

impl Default for SiToUniParams {
    fn default() -> Self {
        Self {
            lookahead: 0.1,
            v_max: f64::INFINITY,
            omega_max: f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackerGains {
    pub k_lin: f64,
    pub k_ang: f64,
    pub arrive_radius: f64,
}

impl Default for TrackerGains {
    fn default() -> Self {
        Self {
            k_lin: 0.8,
            k_ang: 2.0,
            arrive_radius: 0.02,
        }
    }
}

/// Project a planar velocity `u` for the point `ℓ` ahead of the robot onto
/// unicycle inputs, then clamp each channel.
pub fn si_to_unicycle(
    u: [f64; 2],
    theta: f64,
    p: &SiToUniParams,
) -> Result<ControlInput, DynamicsError> {
    if !(u[0].is_finite() && u[1].is_finite() && theta.is_finite()) {
        return Err(DynamicsError::Numeric(format!("command {u:?} at heading {theta}")));
    }
    let (s, c) = theta.sin_cos();
    let v = c * u[0] + s * u[1];
    let omega = (-s * u[0] + c * u[1]) / p.lookahead;
    Ok(ControlInput::UnicycleCmd {
        v: v.clamp(-p.v_max, p.v_max),
        omega: omega.clamp(-p.omega_max, p.omega_max),
    })
}

/// The point `ℓ` ahead of a unicycle along its heading.
pub fn offset_point(x: f64, y: f64, theta: f64, lookahead: f64) -> [f64; 2] {
    [x + lookahead * theta.cos(), y + lookahead * theta.sin()]
}

/// Proportional ρ–α tracker toward `target`. Returns zero inside the arrival radius.
pub fn track_point(pose: &RobotState, target: [f64; 2], g: &TrackerGains) -> ControlInput {
    let RobotState::Unicycle { x, y, theta } = *pose else {
        let p = pose.position();
        return ControlInput::Velocity {
            u: vec![g.k_lin * (target[0] - p[0]), g.k_lin * (target[1] - p[1])],
        };
    };
    let (dx, dy) = (target[0] - x, target[1] - y);
    let rho = dx.hypot(dy);
    if rho < g.arrive_radius {
        return ControlInput::UnicycleCmd { v: 0.0, omega: 0.0 };
    }
    let alpha = wrap_angle(dy.atan2(dx) - theta).unwrap_or(0.0);
    ControlInput::UnicycleCmd {
        v: (g.k_lin * rho * alpha.cos()).max(0.0),
        omega: g.k_ang * alpha,
    }
}

/// Whether a pose is within the arrival radius of `target`.
pub fn arrived(pose: &RobotState, target: [f64; 2], g: &TrackerGains) -> bool {
    let p = pose.position();
    (target[0] - p[0]).hypot(target[1] - p[1]) < g.arrive_radius
}
