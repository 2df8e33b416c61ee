//! SEA plant: free-motion and contact dynamics with matched and mismatched
//! disturbance channels.
//!
//! The simulator always integrates the plant with the *actual* parameters.
//! The nominal set is what the observer and controllers believe; the gap
//! between the two shows up as lumped disturbance.

use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::signal::Signal;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlantError {
    #[error("invalid parameter {field}: {reason}")]
    InvalidParameter { field: &'static str, reason: &'static str },
    #[error("non-finite plant state {0:?}")]
    NonFiniteState(PlantState),
}

/// One set of SEA physical parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeaParams {
    /// Motor-side inertia including the reducer (kg m^2).
    pub motor_inertia: f64,
    /// Link inertia (kg m^2).
    pub link_inertia: f64,
    /// Motor viscous friction (N m s/rad).
    pub motor_damping: f64,
    /// Link viscous friction (N m s/rad).
    pub link_damping: f64,
    /// Spring stiffness (N m/rad).
    pub stiffness: f64,
}

impl SeaParams {
    /// Nominal bench parameters. Damping is not reported for the bench and defaults to zero.
    pub const fn standard() -> Self {
        Self { motor_inertia: 2.2e-6, link_inertia: 4e-6, motor_damping: 0.0, link_damping: 0.0, stiffness: 0.14 }
    }

    pub fn validate(&self) -> Result<(), PlantError> {
        let positive =
            [("motor_inertia", self.motor_inertia), ("link_inertia", self.link_inertia), ("stiffness", self.stiffness)];
        for (field, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(PlantError::InvalidParameter { field, reason: "must be finite and > 0" });
            }
        }
        for (field, v) in [("motor_damping", self.motor_damping), ("link_damping", self.link_damping)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(PlantError::InvalidParameter { field, reason: "must be finite and >= 0" });
            }
        }
        Ok(())
    }

    /// `k / Jl`, the spring-to-link gain (1/s^2).
    pub fn link_gain(&self) -> f64 {
        self.stiffness / self.link_inertia
    }
}

/// Nominal (model) and actual (simulated) parameter sets.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantParams {
    pub nominal: SeaParams,
    pub actual: SeaParams,
}

impl PlantParams {
    pub const fn exact(p: SeaParams) -> Self {
        Self { nominal: p, actual: p }
    }

    pub const fn standard() -> Self {
        Self::exact(SeaParams::standard())
    }

    pub fn validate(&self) -> Result<(), PlantError> {
        self.nominal.validate()?;
        self.actual.validate()
    }

    pub fn select(&self, which: Which) -> &SeaParams {
        match which {
            Which::Nominal => &self.nominal,
            Which::Actual => &self.actual,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Which {
    Nominal,
    Actual,
}

/// `xi = [q, q_dot, theta, theta_dot]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PlantState {
    pub q: f64,
    pub q_dot: f64,
    pub theta: f64,
    pub theta_dot: f64,
}

impl PlantState {
    pub const fn new(q: f64, q_dot: f64, theta: f64, theta_dot: f64) -> Self {
        Self { q, q_dot, theta, theta_dot }
    }

    pub fn to_vector(&self) -> Vector4<f64> {
        Vector4::new(self.q, self.q_dot, self.theta, self.theta_dot)
    }

    pub fn from_vector(v: &Vector4<f64>) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }

    pub fn is_finite(&self) -> bool {
        self.q.is_finite() && self.q_dot.is_finite() && self.theta.is_finite() && self.theta_dot.is_finite()
    }

    pub fn max_abs(&self) -> f64 {
        self.q.abs().max(self.q_dot.abs()).max(self.theta.abs()).max(self.theta_dot.abs())
    }
}

/// Spring torque `k (theta - q)` with the nominal or actual stiffness.
pub fn spring_torque(params: &PlantParams, state: &PlantState, which: Which) -> f64 {
    params.select(which).stiffness * (state.theta - state.q)
}

/// Scripted internal disturbances.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceProfile {
    /// Gravity moment `m g l`; the gravity torque is `gravity_moment * sin(q)`.
    pub gravity_moment: f64,
    /// Unknown motor-side disturbance torque (N m).
    pub motor: Signal,
    /// Unknown link-side disturbance torque (N m).
    pub link: Signal,
}

impl DisturbanceProfile {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn gravity(&self, q: f64) -> f64 {
        self.gravity_moment * q.sin()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum ContactMode {
    /// The environment is permanently attached to the link.
    #[default]
    AlwaysEngaged,
    /// The environment only pushes, and only while `q >= qe`.
    Unilateral,
}

/// Mass-spring-damper environment plus an applied torque.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentModel {
    pub inertia: f64,
    pub damping: f64,
    pub stiffness: f64,
    /// Environment rest angle `qe(t)` (rad).
    pub rest_angle: Signal,
    /// Applied external torque `tau_a(t)` (N m).
    pub applied_torque: Signal,
    pub contact_mode: ContactMode,
}

impl Default for EnvironmentModel {
    fn default() -> Self {
        Self {
            inertia: 0.0,
            damping: 0.0,
            stiffness: 0.0,
            rest_angle: Signal::zero(),
            applied_torque: Signal::zero(),
            contact_mode: ContactMode::AlwaysEngaged,
        }
    }
}

impl EnvironmentModel {
    pub fn validate(&self) -> Result<(), PlantError> {
        for (field, v) in [("inertia", self.inertia), ("damping", self.damping), ("stiffness", self.stiffness)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(PlantError::InvalidParameter { field, reason: "must be finite and >= 0" });
            }
        }
        Ok(())
    }

    fn engaged(&self, q: f64, t: f64) -> bool {
        match self.contact_mode {
            ContactMode::AlwaysEngaged => true,
            ContactMode::Unilateral => q >= self.rest_angle.value(t),
        }
    }
}

/// State derivative together with the environment torque acting on the link.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub derivative: Vector4<f64>,
    pub tau_env: f64,
}

fn check_finite(state: &PlantState) -> Result<(), PlantError> {
    if state.is_finite() {
        Ok(())
    } else {
        Err(PlantError::NonFiniteState(*state))
    }
}

fn motor_acceleration(p: &SeaParams, state: &PlantState, tau_m: f64, tau_s: f64, tau_m_ud: f64) -> f64 {
    (tau_m - tau_s - p.motor_damping * state.theta_dot - tau_m_ud) / p.motor_inertia
}

/// Free-motion dynamics evaluated with the actual parameters.
pub fn free_motion_derivative(
    params: &PlantParams,
    state: &PlantState,
    tau_m: f64,
    dist: &DisturbanceProfile,
    t: f64,
) -> Result<Vector4<f64>, PlantError> {
    check_finite(state)?;
    let p = &params.actual;
    let tau_s = spring_torque(params, state, Which::Actual);
    let q_ddot = (tau_s - p.link_damping * state.q_dot - dist.gravity(state.q) - dist.link.value(t)) / p.link_inertia;
    let theta_ddot = motor_acceleration(p, state, tau_m, tau_s, dist.motor.value(t));
    Ok(Vector4::new(state.q_dot, q_ddot, state.theta_dot, theta_ddot))
}

/// Contact dynamics. The environment inertia is folded into the link inertia
/// while engaged; unilateral contact never pulls on the link.
pub fn contact_derivative(
    params: &PlantParams,
    state: &PlantState,
    tau_m: f64,
    dist: &DisturbanceProfile,
    env: &EnvironmentModel,
    t: f64,
) -> Result<Evaluation, PlantError> {
    check_finite(state)?;
    let p = &params.actual;
    let tau_s = spring_torque(params, state, Which::Actual);
    let tau_a = env.applied_torque.value(t);
    let drive = tau_s - p.link_damping * state.q_dot - dist.gravity(state.q) - dist.link.value(t) - tau_a;

    let free_q_ddot = drive / p.link_inertia;
    let (q_ddot, reaction) = if env.engaged(state.q, t) {
        let [qe, qe_dot, qe_ddot] = env.rest_angle.derivatives::<3>(t);
        let passive = env.damping * (state.q_dot - qe_dot) + env.stiffness * (state.q - qe);
        let q_ddot = (drive + env.inertia * qe_ddot - passive) / (p.link_inertia + env.inertia);
        let reaction = env.inertia * (q_ddot - qe_ddot) + passive;
        if env.contact_mode == ContactMode::Unilateral && reaction < 0.0 {
            (free_q_ddot, 0.0)
        } else {
            (q_ddot, reaction)
        }
    } else {
        (free_q_ddot, 0.0)
    };

    let theta_ddot = motor_acceleration(p, state, tau_m, tau_s, dist.motor.value(t));
    Ok(Evaluation { derivative: Vector4::new(state.q_dot, q_ddot, state.theta_dot, theta_ddot), tau_env: tau_a + reaction })
}

/// Matched lumped disturbance of the reduced force-control model,
/// `tau_m - Jm_n theta_ddot - bm_n theta_dot` expanded into its physical sources.
pub fn lumped_force_disturbance(
    params: &PlantParams,
    state: &PlantState,
    q_ddot: f64,
    theta_ddot: f64,
    dist: &DisturbanceProfile,
    tau_env: f64,
    t: f64,
) -> f64 {
    let (a, n) = (&params.actual, &params.nominal);
    (a.motor_inertia - n.motor_inertia) * theta_ddot
        + (a.motor_damping - n.motor_damping) * state.theta_dot
        + dist.motor.value(t)
        + a.link_inertia * q_ddot
        + a.link_damping * state.q_dot
        + dist.gravity(state.q)
        + dist.link.value(t)
        + tau_env
}

/// Nominal state-space model `xi_dot = A_n xi + b_n tau_m - tau_dis`.
pub fn state_space_matrices(params: &PlantParams) -> (Matrix4<f64>, Vector4<f64>) {
    let n = &params.nominal;
    let (jm, jl, k) = (n.motor_inertia, n.link_inertia, n.stiffness);
    #[rustfmt::skip]
    let a = Matrix4::new(
        0.0,     1.0,                 0.0,     0.0,
        -k / jl, -n.link_damping / jl, k / jl,  0.0,
        0.0,     0.0,                 0.0,     1.0,
        k / jm,  0.0,                 -k / jm, -n.motor_damping / jm,
    );
    (a, Vector4::new(0.0, 0.0, 0.0, 1.0 / jm))
}

/// Normalized disturbance vector implied by an actual state derivative.
pub fn disturbance_vector(
    a: &Matrix4<f64>,
    b: &Vector4<f64>,
    xi: &Vector4<f64>,
    tau_m: f64,
    xi_dot: &Vector4<f64>,
) -> Vector4<f64> {
    a * xi + b * tau_m - xi_dot
}

/// Total mechanical energy with the actual parameters.
pub fn energy(params: &PlantParams, state: &PlantState) -> f64 {
    let p = &params.actual;
    0.5 * p.motor_inertia * state.theta_dot.powi(2)
        + 0.5 * p.link_inertia * state.q_dot.powi(2)
        + 0.5 * p.stiffness * (state.theta - state.q).powi(2)
}
