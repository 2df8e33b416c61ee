//! Disturbance observers.
//!
//! [`ObserverState`] is the second-order observer in auxiliary-variable form.
//! It estimates the normalized disturbance vector `tau_dis` of
//! `xi_dot = A_n xi + b_n tau_m - tau_dis` together with its first two time
//! derivatives. [`ZeroOrderDob`] is the conventional first-order observer used
//! by the force loop.

use nalgebra::{Matrix4, Vector4};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::plant::SeaParams;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DobError {
    #[error("observer bandwidth must be finite and > 0, got {0}")]
    NonPositiveBandwidth(f64),
    #[error("observer gains ({l1}, {l2}, {l3}) are not Hurwitz")]
    NotHurwitz { l1: f64, l2: f64, l3: f64 },
    #[error("non-finite observer input")]
    NonFinite,
}

/// Gains of the characteristic cubic `s^3 + L1 s^2 + L2 s + L3`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObserverGains {
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub bandwidth: Option<f64>,
}

impl ObserverGains {
    /// Explicit gains, rejected unless the cubic is Hurwitz.
    pub fn new(l1: f64, l2: f64, l3: f64) -> Result<Self, DobError> {
        if !(l1.is_finite() && l2.is_finite() && l3.is_finite()) {
            return Err(DobError::NonFinite);
        }
        if !is_hurwitz_cubic(l1, l2, l3) {
            return Err(DobError::NotHurwitz { l1, l2, l3 });
        }
        Ok(Self { l1, l2, l3, bandwidth: None })
    }

    /// Triple pole at `-g`: `(3g, 3g^2, g^3)`.
    pub fn tune(g: f64) -> Result<Self, DobError> {
        if !(g.is_finite() && g > 0.0) {
            return Err(DobError::NonPositiveBandwidth(g));
        }
        Ok(Self { l1: 3.0 * g, l2: 3.0 * g * g, l3: g * g * g, bandwidth: Some(g) })
    }

    pub fn roots(&self) -> [Complex64; 3] {
        characteristic_roots(self.l1, self.l2, self.l3)
    }

    /// Slowest decay rate, `min |Re(lambda)|` over the cubic roots.
    pub fn lambda_min(&self) -> f64 {
        self.roots().iter().map(|r| r.re.abs()).fold(f64::INFINITY, f64::min)
    }
}

/// Routh-Hurwitz test for `s^3 + a s^2 + b s + c`.
pub fn is_hurwitz_cubic(a: f64, b: f64, c: f64) -> bool {
    a > 0.0 && c > 0.0 && a * b > c
}

/// Roots of `s^3 + l1 s^2 + l2 s + l3`.
///
/// One real root is found in closed form (Cardano or the trigonometric form),
/// polished by Newton, and deflated to a quadratic. Coefficients that form an
/// exact cube give an exact triple root.
pub fn characteristic_roots(l1: f64, l2: f64, l3: f64) -> [Complex64; 3] {
    let (a, b, c) = (l1, l2, l3);
    let shift = a / 3.0;
    let p = b - a * a / 3.0;
    let q = 2.0 * a * a * a / 27.0 - a * b / 3.0 + c;
    let disc = (q / 2.0).powi(2) + (p / 3.0).powi(3);

    let y = if p == 0.0 && q == 0.0 {
        0.0
    } else if disc > 0.0 {
        let sq = disc.sqrt();
        // avoid cancellation between -q/2 and sqrt(disc)
        let u = (-q / 2.0 - q.signum() * sq).cbrt();
        if u == 0.0 {
            0.0
        } else {
            u - p / (3.0 * u)
        }
    } else {
        let m = 2.0 * (-p / 3.0).sqrt();
        let arg = (3.0 * q / (p * m)).clamp(-1.0, 1.0);
        m * (arg.acos() / 3.0).cos()
    };
    let mut r = y - shift;

    let f = |x: f64| ((x + a) * x + b) * x + c;
    let df = |x: f64| (3.0 * x + 2.0 * a) * x + b;
    for _ in 0..8 {
        let d = df(r);
        if d == 0.0 {
            break;
        }
        let next = r - f(r) / d;
        if !next.is_finite() || f(next).abs() >= f(r).abs() {
            break;
        }
        r = next;
    }

    // s^3 + a s^2 + b s + c = (s - r)(s^2 + e1 s + e0)
    let e1 = a + r;
    let e0 = b + r * e1;
    let [s1, s2] = quadratic_roots(e1, e0);
    [Complex64::new(r, 0.0), s1, s2]
}

/// Roots of `s^2 + b s + c`.
fn quadratic_roots(b: f64, c: f64) -> [Complex64; 2] {
    let disc = b * b - 4.0 * c;
    if disc >= 0.0 {
        let sq = disc.sqrt();
        let t = -0.5 * (b + b.signum() * sq);
        if t == 0.0 {
            return [Complex64::new(0.0, 0.0), Complex64::new(-b, 0.0)];
        }
        [Complex64::new(t, 0.0), Complex64::new(c / t, 0.0)]
    } else {
        let im = 0.5 * (-disc).sqrt();
        [Complex64::new(-0.5 * b, im), Complex64::new(-0.5 * b, -im)]
    }
}

/// Auxiliary observer vectors `z1, z2, z3`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ObserverState {
    pub z1: Vector4<f64>,
    pub z2: Vector4<f64>,
    pub z3: Vector4<f64>,
}

impl ObserverState {
    /// State whose extracted estimates are all zero at `xi0`.
    pub fn zero_estimate(gains: &ObserverGains, xi0: &Vector4<f64>) -> Self {
        Self { z1: xi0 * (gains.l1 - gains.l2 + gains.l3), z2: xi0 * (gains.l2 - gains.l3), z3: xi0 * gains.l3 }
    }

    fn axpy(&self, k: f64, d: &ObserverState) -> ObserverState {
        ObserverState { z1: self.z1 + d.z1 * k, z2: self.z2 + d.z2 * k, z3: self.z3 + d.z3 * k }
    }

    pub fn is_finite(&self) -> bool {
        self.z1.iter().chain(self.z2.iter()).chain(self.z3.iter()).all(|v| v.is_finite())
    }

    /// One sample period of RK4 with `tau_m` held. Between samples `xi` follows
    /// the cubic Hermite interpolant whose end slopes come from the model plus
    /// the current disturbance estimate. The held torque cancels out of its
    /// midpoint, leaving `A (xi_prev - xi_next)` and the estimated disturbance
    /// rate as the chord correction. A straight chord misses the curvature a
    /// torque step puts into `theta` within the sample.
    #[allow(clippy::too_many_arguments)]
    pub fn advance(
        &mut self,
        gains: &ObserverGains,
        a: &Matrix4<f64>,
        b: &Vector4<f64>,
        xi_prev: &Vector4<f64>,
        xi_next: &Vector4<f64>,
        tau_m: f64,
        dt: f64,
    ) -> Result<(), DobError> {
        let tau_dis_dot = self.z2 - xi_prev * gains.l2 + self.z3;
        let mid = (xi_prev + xi_next) * 0.5 + (a * (xi_prev - xi_next) + tau_dis_dot * dt) * (dt / 8.0);
        let k1 = observer_step_derivative(gains, a, b, xi_prev, tau_m, self)?;
        let k2 = observer_step_derivative(gains, a, b, &mid, tau_m, &self.axpy(0.5 * dt, &k1))?;
        let k3 = observer_step_derivative(gains, a, b, &mid, tau_m, &self.axpy(0.5 * dt, &k2))?;
        let k4 = observer_step_derivative(gains, a, b, xi_next, tau_m, &self.axpy(dt, &k3))?;
        let w = dt / 6.0;
        self.z1 += (k1.z1 + (k2.z1 + k3.z1) * 2.0 + k4.z1) * w;
        self.z2 += (k1.z2 + (k2.z2 + k3.z2) * 2.0 + k4.z2) * w;
        self.z3 += (k1.z3 + (k2.z3 + k3.z3) * 2.0 + k4.z3) * w;
        if self.is_finite() {
            Ok(())
        } else {
            Err(DobError::NonFinite)
        }
    }
}

/// Right-hand side of the auxiliary-variable observer, fed with measured `xi`.
pub fn observer_step_derivative(
    gains: &ObserverGains,
    a: &Matrix4<f64>,
    b: &Vector4<f64>,
    xi: &Vector4<f64>,
    tau_m: f64,
    obs: &ObserverState,
) -> Result<ObserverState, DobError> {
    if !tau_m.is_finite() || xi.iter().any(|v| !v.is_finite()) || !obs.is_finite() {
        return Err(DobError::NonFinite);
    }
    let (l1, l2, l3) = (gains.l1, gains.l2, gains.l3);
    let (ca, cb, cc) = (l1 - l2 + l3, l2 - l3, l3);
    let model = a * xi + b * tau_m + xi * l1;
    let s = obs.z1 + obs.z2;
    Ok(ObserverState {
        z1: -s * ca + obs.z2 + model * ca - xi * cb,
        z2: -s * cb + obs.z3 + model * cb - xi * l3,
        z3: -s * cc + model * cc,
    })
}

/// Disturbance estimates and the channel scalars used by the position law.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceEstimates {
    pub tau_dis: Vector4<f64>,
    pub tau_dis_dot: Vector4<f64>,
    pub tau_dis_ddot: Vector4<f64>,
    pub d2: f64,
    pub d2_dot: f64,
    pub d2_ddot: f64,
    pub d4: f64,
}

impl DisturbanceEstimates {
    /// Builds the channel scalars from a disturbance vector and its derivatives.
    pub fn from_vectors(
        nominal: &SeaParams,
        xi: &Vector4<f64>,
        tau_dis: Vector4<f64>,
        tau_dis_dot: Vector4<f64>,
        tau_dis_ddot: Vector4<f64>,
    ) -> Self {
        let kl = nominal.stiffness / nominal.link_inertia;
        let bl = nominal.link_damping / nominal.link_inertia;
        let km = nominal.stiffness / nominal.motor_inertia;
        let bm = nominal.motor_damping / nominal.motor_inertia;
        let d2 = kl * xi[0] + bl * xi[1] + tau_dis[1];
        // x2_dot = kl x3 - d2 and x2_ddot = kl x4 - d2_dot under the nominal model
        let d2_dot = kl * xi[1] + bl * (kl * xi[2] - d2) + tau_dis_dot[1];
        let d2_ddot = kl * (kl * xi[2] - d2) + bl * (kl * xi[3] - d2_dot) + tau_dis_ddot[1];
        let d4 = km * (xi[2] - xi[0]) + bm * xi[3] + tau_dis[3];
        Self { tau_dis, tau_dis_dot, tau_dis_ddot, d2, d2_dot, d2_ddot, d4 }
    }

    pub fn is_finite(&self) -> bool {
        [self.d2, self.d2_dot, self.d2_ddot, self.d4].iter().all(|v| v.is_finite())
    }
}

/// Inverts the auxiliary-variable definitions.
pub fn extract_estimates(
    obs: &ObserverState,
    xi: &Vector4<f64>,
    gains: &ObserverGains,
    nominal: &SeaParams,
) -> DisturbanceEstimates {
    let tau_dis = obs.z1 - xi * gains.l1 + obs.z2;
    let tau_dis_dot = obs.z2 - xi * gains.l2 + obs.z3;
    let tau_dis_ddot = obs.z3 - xi * gains.l3;
    DisturbanceEstimates::from_vectors(nominal, xi, tau_dis, tau_dis_dot, tau_dis_ddot)
}

/// Derivative of the internal state and the current estimate of the
/// conventional observer for `x2_dot = tau_m / Jm_n - d`.
pub fn zero_order_dob_step(g: f64, jm_n: f64, x2: f64, tau_m: f64, z: f64) -> Result<(f64, f64), DobError> {
    if !(g.is_finite() && g > 0.0) {
        return Err(DobError::NonPositiveBandwidth(g));
    }
    let d_hat = z - g * x2;
    Ok((g * (tau_m / jm_n - d_hat), d_hat))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZeroOrderDob {
    pub bandwidth: f64,
    pub z: f64,
}

impl ZeroOrderDob {
    /// Observer with a zero initial estimate at motor velocity `x2`.
    pub fn new(bandwidth: f64, x2: f64) -> Result<Self, DobError> {
        if !(bandwidth.is_finite() && bandwidth > 0.0) {
            return Err(DobError::NonPositiveBandwidth(bandwidth));
        }
        Ok(Self { bandwidth, z: bandwidth * x2 })
    }

    pub fn estimate(&self, x2: f64) -> f64 {
        self.z - self.bandwidth * x2
    }

    /// RK4 over one sample with `x2` interpolated linearly and `tau_m` held.
    pub fn advance(&mut self, jm_n: f64, x2_prev: f64, x2_next: f64, tau_m: f64, dt: f64) -> Result<(), DobError> {
        let g = self.bandwidth;
        let mid = 0.5 * (x2_prev + x2_next);
        let (k1, _) = zero_order_dob_step(g, jm_n, x2_prev, tau_m, self.z)?;
        let (k2, _) = zero_order_dob_step(g, jm_n, mid, tau_m, self.z + 0.5 * dt * k1)?;
        let (k3, _) = zero_order_dob_step(g, jm_n, mid, tau_m, self.z + 0.5 * dt * k2)?;
        let (k4, _) = zero_order_dob_step(g, jm_n, x2_next, tau_m, self.z + dt * k3)?;
        self.z += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if self.z.is_finite() {
            Ok(())
        } else {
            Err(DobError::NonFinite)
        }
    }
}
