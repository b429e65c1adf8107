//! Forward-Euler integrators for single-integrator, unicycle and
//! double-integrator robots.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum DynamicsError {
    #[error("model mismatch: {0}")]
    Model(String),
    #[error("non-finite value: {0}")]
    Numeric(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RobotState {
    SingleInt { pos: Vec<f64> },
    Unicycle { x: f64, y: f64, theta: f64 },
    DoubleInt { pos: Vec<f64>, vel: Vec<f64> },
}

impl RobotState {
    pub fn single(pos: &[f64]) -> Self {
        RobotState::SingleInt { pos: pos.to_vec() }
    }

    pub fn unicycle(x: f64, y: f64, theta: f64) -> Self {
        RobotState::Unicycle { x, y, theta }
    }

    /// Position part of the state (`(x, y)` for unicycles).
    pub fn position(&self) -> Vec<f64> {
        match self {
            RobotState::SingleInt { pos } | RobotState::DoubleInt { pos, .. } => pos.clone(),
            RobotState::Unicycle { x, y, .. } => vec![*x, *y],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlInput {
    Velocity { u: Vec<f64> },
    UnicycleCmd { v: f64, omega: f64 },
    Accel { a: Vec<f64> },
}

impl ControlInput {
    pub fn values(&self) -> Vec<f64> {
        match self {
            ControlInput::Velocity { u } => u.clone(),
            ControlInput::UnicycleCmd { v, omega } => vec![*v, *omega],
            ControlInput::Accel { a } => a.clone(),
        }
    }
}

/// Input bounds applied by the integrator. `None` leaves a channel unbounded.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Saturation {
    /// Per-component bound on single-integrator velocity, m/s.
    pub velocity: Option<f64>,
    pub v_max: Option<f64>,
    pub omega_max: Option<f64>,
    /// Per-component bound on acceleration, m/s².
    pub accel: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub dt: f64,
    #[serde(default)]
    pub saturation: Saturation,
}

impl IntegratorConfig {
    pub fn new(dt: f64) -> Self {
        Self {
            dt,
            saturation: Saturation::default(),
        }
    }
}

fn clamp(x: f64, bound: Option<f64>) -> f64 {
    match bound {
        Some(b) => x.clamp(-b, b),
        None => x,
    }
}

fn finite(xs: &[f64], what: &str) -> Result<(), DynamicsError> {
    if xs.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(DynamicsError::Numeric(format!("{what} {xs:?}")))
    }
}

/// Wrap to the half-open interval `(−π, π]`.
pub fn wrap_angle(theta: f64) -> Result<f64, DynamicsError> {
    if !theta.is_finite() {
        return Err(DynamicsError::Numeric(format!("angle {theta}")));
    }
    if theta > -PI && theta <= PI {
        return Ok(theta);
    }
    let r = theta.rem_euclid(2.0 * PI);
    Ok(if r > PI { r - 2.0 * PI } else { r })
}

/// One forward-Euler step of length `cfg.dt`.
pub fn step(
    state: &RobotState,
    input: &ControlInput,
    cfg: &IntegratorConfig,
) -> Result<RobotState, DynamicsError> {
    if !(cfg.dt > 0.0 && cfg.dt.is_finite()) {
        return Err(DynamicsError::Numeric(format!("dt {}", cfg.dt)));
    }
    finite(&input.values(), "input")?;
    let dt = cfg.dt;
    let sat = &cfg.saturation;
    match (state, input) {
        (RobotState::SingleInt { pos }, ControlInput::Velocity { u }) => {
            if pos.len() != u.len() {
                return Err(DynamicsError::Model(format!(
                    "{}-D position with {}-D velocity",
                    pos.len(),
                    u.len()
                )));
            }
            let pos = pos
                .iter()
                .zip(u)
                .map(|(p, v)| p + dt * clamp(*v, sat.velocity))
                .collect();
            Ok(RobotState::SingleInt { pos })
        }
        (RobotState::Unicycle { x, y, theta }, ControlInput::UnicycleCmd { v, omega }) => {
            let v = clamp(*v, sat.v_max);
            let omega = clamp(*omega, sat.omega_max);
            Ok(RobotState::Unicycle {
                x: x + dt * v * theta.cos(),
                y: y + dt * v * theta.sin(),
                theta: wrap_angle(theta + dt * omega)?,
            })
        }
        (RobotState::DoubleInt { pos, vel }, ControlInput::Accel { a }) => {
            if pos.len() != vel.len() || vel.len() != a.len() {
                return Err(DynamicsError::Model("double-integrator dimension mismatch".into()));
            }
            let new_pos = pos.iter().zip(vel).map(|(p, v)| p + dt * v).collect();
            let new_vel = vel
                .iter()
                .zip(a)
                .map(|(v, a)| v + dt * clamp(*a, sat.accel))
                .collect();
            Ok(RobotState::DoubleInt {
                pos: new_pos,
                vel: new_vel,
            })
        }
        (s, i) => Err(DynamicsError::Model(format!(
            "state {} cannot take input {}",
            variant_name(s),
            input_name(i)
        ))),
    }
}

fn variant_name(s: &RobotState) -> &'static str {
    match s {
        RobotState::SingleInt { .. } => "single_int",
        RobotState::Unicycle { .. } => "unicycle",
        RobotState::DoubleInt { .. } => "double_int",
    }
}

fn input_name(i: &ControlInput) -> &'static str {
    match i {
        ControlInput::Velocity { .. } => "velocity",
        ControlInput::UnicycleCmd { .. } => "unicycle_cmd",
        ControlInput::Accel { .. } => "accel",
    }
}
