//! Sliding mode position and force control laws.
//!
//! Position control acts on the fourth-order link dynamics
//! `sigma = e''' + c2 e'' + c1 e' + c0 e`, with `sigma_dot = -alpha tau_m + beta`
//! and `alpha = k / (Jm Jl)`. Force control acts on the second-order motor
//! dynamics through the desired motor angle `theta_des = tau_des / k + q`.
//! Both laws have discontinuous, quasi (`sigma / (|sigma| + eps)`) and
//! continuous (integrated switching term) variants.

use std::f64::consts::SQRT_2;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dob::DisturbanceEstimates;
use crate::plant::{PlantState, SeaParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SmcError {
    #[error("invalid controller setting {field}: {reason}")]
    Invalid { field: &'static str, reason: &'static str },
}

fn invalid(field: &'static str, reason: &'static str) -> SmcError {
    SmcError::Invalid { field, reason }
}

/// Signum with `sgn(0) = 0`.
pub fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Boundary-layer approximation of the signum, `sigma / (|sigma| + eps)`.
pub fn quasi_sign(sigma: f64, eps: f64) -> Result<f64, SmcError> {
    if eps == 0.0 || !eps.is_finite() {
        return Err(invalid("epsilon", "must be finite and nonzero"));
    }
    Ok(sigma / (sigma.abs() + eps))
}

/// `rho = delta_beta + mu / sqrt(2)`.
pub fn smc_gain_from_bound(delta_beta: f64, mu: f64) -> Result<f64, SmcError> {
    if !(mu.is_finite() && mu > 0.0) {
        return Err(invalid("mu", "must be finite and > 0"));
    }
    if !(delta_beta.is_finite() && delta_beta >= 0.0) {
        return Err(invalid("delta_beta", "must be finite and >= 0"));
    }
    Ok(delta_beta + mu / SQRT_2)
}

/// Upper bound on the reaching time, `sqrt(2) / mu * |sigma0|`.
pub fn reaching_time_bound(mu: f64, sigma0: f64) -> f64 {
    SQRT_2 / mu * sigma0.abs()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum SwitchLaw {
    Discontinuous,
    /// `sgn` replaced by `s / (|s| + epsilon)` where `s` is the sliding
    /// variable divided by the lowest surface coefficient.
    Quasi {
        epsilon: f64,
    },
    /// Switching term integrated before actuation.
    Continuous,
}

/// Deliberate controller mutations used as negative controls.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Ablation {
    #[default]
    None,
    /// Switching term applied with the wrong sign.
    FlipSwitchSign,
    /// Matched-channel term removed from the position feedforward.
    DropMatchedEstimate,
}

impl Ablation {
    fn switch_sign(self) -> f64 {
        if self == Ablation::FlipSwitchSign {
            -1.0
        } else {
            1.0
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PositionControllerConfig {
    /// Surface coefficients `[c0, c1, c2]`.
    pub c: [f64; 3],
    /// Switching gain in sigma-rate units (rad/s^4).
    pub rho: f64,
    pub law: SwitchLaw,
    /// Continuous-law surface coefficients `[c0, c1, c2, c3]`.
    pub continuous: [f64; 4],
    /// Reaching-rate margin.
    pub mu: f64,
    /// When false the disturbance estimates are replaced by zero
    /// (conventional SMC); nominal model terms are kept.
    pub use_estimates: bool,
    pub ablation: Ablation,
}

impl PositionControllerConfig {
    /// Surface `(d/dt + g)^3 e` and continuous surface `(d/dt + g)^4 e`.
    pub fn from_bandwidth(g: f64, rho: f64) -> Self {
        Self {
            c: [g.powi(3), 3.0 * g * g, 3.0 * g],
            rho,
            law: SwitchLaw::Discontinuous,
            continuous: [g.powi(4), 4.0 * g.powi(3), 6.0 * g * g, 4.0 * g],
            mu: 1.0,
            use_estimates: true,
            ablation: Ablation::None,
        }
    }

    pub fn validate(&self) -> Result<(), SmcError> {
        if self.c.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(invalid("c", "surface coefficients must be finite and >= 0"));
        }
        validate_common(self.rho, self.mu, self.law)?;
        if self.law == SwitchLaw::Continuous && self.continuous.iter().any(|c| !(c.is_finite() && *c > 0.0)) {
            return Err(invalid("continuous", "coefficients must be finite and > 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForceControllerConfig {
    pub c0: f64,
    /// Switching gain in sigma-rate units (rad/s^2).
    pub rho: f64,
    pub law: SwitchLaw,
    /// Continuous-law surface coefficients `[c0, c1]`.
    pub continuous: [f64; 2],
    /// Include the desired motor acceleration (needs a link acceleration estimate).
    pub use_link_accel: bool,
    pub mu: f64,
    pub use_estimates: bool,
    pub ablation: Ablation,
}

impl ForceControllerConfig {
    pub fn new(c0: f64, rho: f64) -> Self {
        Self {
            c0,
            rho,
            law: SwitchLaw::Discontinuous,
            continuous: [c0 * c0, 2.0 * c0],
            use_link_accel: true,
            mu: 1.0,
            use_estimates: true,
            ablation: Ablation::None,
        }
    }

    pub fn validate(&self) -> Result<(), SmcError> {
        if !(self.c0.is_finite() && self.c0 >= 0.0) {
            return Err(invalid("c0", "must be finite and >= 0"));
        }
        validate_common(self.rho, self.mu, self.law)?;
        if self.law == SwitchLaw::Continuous && self.continuous.iter().any(|c| !(c.is_finite() && *c > 0.0)) {
            return Err(invalid("continuous", "coefficients must be finite and > 0"));
        }
        Ok(())
    }
}

fn validate_common(rho: f64, mu: f64, law: SwitchLaw) -> Result<(), SmcError> {
    if !(rho.is_finite() && rho > 0.0) {
        return Err(invalid("rho", "must be finite and > 0"));
    }
    if !(mu.is_finite() && mu > 0.0) {
        return Err(invalid("mu", "must be finite and > 0"));
    }
    if let SwitchLaw::Quasi { epsilon } = law {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(invalid("epsilon", "must be finite and > 0"));
        }
    }
    Ok(())
}

/// `alpha_p = k / (Jm Jl)`.
pub fn position_alpha(p: &SeaParams) -> f64 {
    p.stiffness / (p.motor_inertia * p.link_inertia)
}

/// `[e, e', e'', e''']` with the disturbance channels substituted.
/// `refs` holds `q_des` and its first four derivatives.
pub fn position_errors(state: &PlantState, est: &DisturbanceEstimates, refs: &[f64; 5], p: &SeaParams) -> [f64; 4] {
    let kl = p.link_gain();
    [refs[0] - state.q, refs[1] - state.q_dot, refs[2] - kl * state.theta + est.d2, refs[3] - kl * state.theta_dot + est.d2_dot]
}

/// `e''' + c2 e'' + c1 e' + c0 e`.
pub fn sliding_variable_position(errors: &[f64; 4], c: &[f64; 3]) -> f64 {
    errors[3] + c[2] * errors[2] + c[1] * errors[1] + c[0] * errors[0]
}

/// Drift term `beta` of `sigma_dot = -alpha tau_m + beta` given (estimated) disturbances.
pub fn position_beta(state: &PlantState, est: &DisturbanceEstimates, refs: &[f64; 5], c: &[f64; 3], p: &SeaParams) -> f64 {
    let kl = p.link_gain();
    refs[4] + c[2] * refs[3] + c[1] * refs[2] + c[0] * refs[1]
        - c[0] * state.q_dot
        - kl * (c[1] * state.theta + c[2] * state.theta_dot)
        + c[1] * est.d2
        + c[2] * est.d2_dot
        + est.d2_ddot
        + kl * est.d4
}

/// `e'''' + c3 e''' + c2 e'' + c1 e' + c0 e`, with `e''''` from a measured motor acceleration.
pub fn continuous_sliding_position(
    errors: &[f64; 4],
    theta_ddot: f64,
    est: &DisturbanceEstimates,
    refs: &[f64; 5],
    c: &[f64; 4],
    p: &SeaParams,
) -> f64 {
    let e4 = refs[4] - p.link_gain() * theta_ddot + est.d2_ddot;
    e4 + c[3] * errors[3] + c[2] * errors[2] + c[1] * errors[1] + c[0] * errors[0]
}

/// Desired motor angle and its first two derivatives from a spring-torque reference.
pub fn theta_des(tau_des: &[f64; 3], q: f64, q_dot: f64, q_ddot_est: f64, k: f64) -> [f64; 3] {
    [tau_des[0] / k + q, tau_des[1] / k + q_dot, tau_des[2] / k + q_ddot_est]
}

/// `e_F' + c0 e_F`.
pub fn sliding_variable_force(e: f64, e_dot: f64, c0: f64) -> f64 {
    e_dot + c0 * e
}

/// `e_F'' + c1 e_F' + c0 e_F`.
pub fn continuous_sliding_force(e: f64, e_dot: f64, e_ddot: f64, c: &[f64; 2]) -> f64 {
    e_ddot + c[1] * e_dot + c[0] * e
}

/// Drift term of `sigma_F_dot = -tau_m / Jm + beta_F`.
pub fn force_beta(theta_dot: f64, thd: &[f64; 3], d: f64, c0: f64, use_link_accel: bool) -> f64 {
    let accel = if use_link_accel { thd[2] } else { 0.0 };
    accel + c0 * thd[1] - c0 * theta_dot + d
}

fn switch_value(law: SwitchLaw, sigma: f64, scale: f64) -> Result<f64, SmcError> {
    match law {
        SwitchLaw::Quasi { epsilon } => quasi_sign(sigma / scale, epsilon),
        _ => Ok(sgn(sigma)),
    }
}

/// Output of one controller evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ControlOutput {
    pub tau_m: f64,
    /// Sliding variable the controller acted on.
    pub sigma: f64,
    /// Drift estimate used in the law.
    pub beta_hat: f64,
    /// Signed switching term `rho * sw` in sliding-variable rate units.
    pub switching: f64,
    /// True when the sample was rejected and the previous output held.
    pub held: bool,
}

/// Memoryless discontinuous or quasi position law.
pub fn position_control(
    state: &PlantState,
    est: &DisturbanceEstimates,
    refs: &[f64; 5],
    cfg: &PositionControllerConfig,
    p: &SeaParams,
) -> Result<ControlOutput, SmcError> {
    let errors = position_errors(state, est, refs, p);
    let sigma = sliding_variable_position(&errors, &cfg.c);
    let beta_hat = position_feedforward(state, est, refs, cfg, p);
    let sw = cfg.ablation.switch_sign() * switch_value(cfg.law, sigma, cfg.c[0].max(f64::MIN_POSITIVE))?;
    Ok(ControlOutput {
        tau_m: (cfg.rho * sw + beta_hat) / position_alpha(p),
        sigma,
        beta_hat,
        switching: cfg.rho * sw,
        held: false,
    })
}

fn position_feedforward(
    state: &PlantState,
    est: &DisturbanceEstimates,
    refs: &[f64; 5],
    cfg: &PositionControllerConfig,
    p: &SeaParams,
) -> f64 {
    let mut beta = position_beta(state, est, refs, &cfg.c, p);
    if cfg.ablation == Ablation::DropMatchedEstimate {
        beta -= p.link_gain() * est.d4;
    }
    beta
}

/// Memoryless discontinuous or quasi force law.
pub fn force_control(
    theta: f64,
    theta_dot: f64,
    thd: &[f64; 3],
    d_hat: f64,
    cfg: &ForceControllerConfig,
    jm_n: f64,
) -> Result<ControlOutput, SmcError> {
    let sigma = sliding_variable_force(thd[0] - theta, thd[1] - theta_dot, cfg.c0);
    let beta_hat = force_beta(theta_dot, thd, d_hat, cfg.c0, cfg.use_link_accel);
    let sw = cfg.ablation.switch_sign() * switch_value(cfg.law, sigma, cfg.c0.max(f64::MIN_POSITIVE))?;
    Ok(ControlOutput { tau_m: jm_n * (cfg.rho * sw + beta_hat), sigma, beta_hat, switching: cfg.rho * sw, held: false })
}

/// What the controller sees at one sample.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Measurement {
    pub state: PlantState,
    /// Link acceleration estimate (filtered double differentiation).
    pub q_ddot: f64,
    /// Motor acceleration estimate (filtered double differentiation).
    pub theta_ddot: f64,
}

/// Position controller with the continuous-law integrator and sample holding.
#[derive(Clone, Debug)]
pub struct PositionController {
    pub config: PositionControllerConfig,
    integrator: f64,
    last: ControlOutput,
}

impl PositionController {
    pub fn new(config: PositionControllerConfig) -> Result<Self, SmcError> {
        config.validate()?;
        Ok(Self { config, integrator: 0.0, last: ControlOutput::default() })
    }

    pub fn step(
        &mut self,
        m: &Measurement,
        est: &DisturbanceEstimates,
        refs: &[f64; 5],
        p: &SeaParams,
        dt: f64,
    ) -> ControlOutput {
        if !est.is_finite() || !m.state.is_finite() {
            self.last.held = true;
            return self.last;
        }
        let cfg = &self.config;
        let out = match cfg.law {
            SwitchLaw::Continuous => {
                let errors = position_errors(&m.state, est, refs, p);
                let sigma = continuous_sliding_position(&errors, m.theta_ddot, est, refs, &cfg.continuous, p);
                let beta_hat = position_feedforward(&m.state, est, refs, cfg, p);
                let alpha = position_alpha(p);
                let switching = cfg.ablation.switch_sign() * cfg.rho * sgn(sigma);
                self.integrator += switching / alpha * dt;
                ControlOutput { tau_m: self.integrator + beta_hat / alpha, sigma, beta_hat, switching, held: false }
            }
            _ => match position_control(&m.state, est, refs, cfg, p) {
                Ok(o) => o,
                Err(_) => {
                    self.last.held = true;
                    return self.last;
                }
            },
        };
        self.last = out;
        out
    }
}

/// Force controller with the continuous-law integrator and sample holding.
#[derive(Clone, Debug)]
pub struct ForceController {
    pub config: ForceControllerConfig,
    integrator: f64,
    last: ControlOutput,
}

impl ForceController {
    pub fn new(config: ForceControllerConfig) -> Result<Self, SmcError> {
        config.validate()?;
        Ok(Self { config, integrator: 0.0, last: ControlOutput::default() })
    }

    /// `thd` is `theta_des` and its derivatives; `d_hat` the matched estimate.
    pub fn step(&mut self, m: &Measurement, thd: &[f64; 3], d_hat: f64, p: &SeaParams, dt: f64) -> ControlOutput {
        if !d_hat.is_finite() || !m.state.is_finite() || thd.iter().any(|v| !v.is_finite()) {
            self.last.held = true;
            return self.last;
        }
        let cfg = &self.config;
        let out = match cfg.law {
            SwitchLaw::Continuous => {
                let (th, thd_) = (m.state.theta, m.state.theta_dot);
                let sigma = continuous_sliding_force(thd[0] - th, thd[1] - thd_, thd[2] - m.theta_ddot, &cfg.continuous);
                let beta_hat = force_beta(thd_, thd, d_hat, cfg.c0, cfg.use_link_accel);
                let switching = cfg.ablation.switch_sign() * cfg.rho * sgn(sigma);
                self.integrator += p.motor_inertia * switching * dt;
                ControlOutput { tau_m: self.integrator + p.motor_inertia * beta_hat, sigma, beta_hat, switching, held: false }
            }
            _ => match force_control(m.state.theta, m.state.theta_dot, thd, d_hat, cfg, p.motor_inertia) {
                Ok(o) => o,
                Err(_) => {
                    self.last.held = true;
                    return self.last;
                }
            },
        };
        self.last = out;
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn table() -> SeaParams {
        SeaParams::standard()
    }

    #[test]
    fn signum_convention() {
        assert_eq!(sgn(0.0), 0.0);
        assert_eq!(sgn(-0.0), 0.0);
        assert_eq!(sgn(1e-300), 1.0);
        assert_eq!(sgn(-3.0), -1.0);
    }

    #[test]
    fn quasi_sign_examples() {
        assert_eq!(quasi_sign(0.0, 0.1).unwrap(), 0.0);
        assert_eq!(quasi_sign(0.25, 0.25).unwrap(), 0.5);
        assert!(quasi_sign(1.0, 0.0).is_err());
        let mut prev = 0.0;
        for s in [1.0, 10.0, 100.0, 1e4] {
            let v = quasi_sign(s, 1.0).unwrap();
            assert!(v > prev && v < 1.0);
            prev = v;
        }
        assert!(1.0 - quasi_sign(1e9, 1.0).unwrap() < 1e-8);
    }

    #[test]
    fn gain_from_bound() {
        assert_relative_eq!(smc_gain_from_bound(1.0, SQRT_2).unwrap(), 2.0);
        assert_relative_eq!(smc_gain_from_bound(0.0, SQRT_2).unwrap(), 1.0);
        assert_relative_eq!(reaching_time_bound(SQRT_2, 1.0), 1.0);
        assert!(smc_gain_from_bound(1.0, 0.0).is_err());
        assert!(smc_gain_from_bound(1.0, -1.0).is_err());
    }

    #[test]
    fn theta_des_examples() {
        assert_relative_eq!(theta_des(&[0.14, 0.0, 0.0], 0.5, 0.0, 0.0, 0.14)[0], 1.5);
        assert_eq!(theta_des(&[0.0; 3], 0.0, 0.0, 0.0, 0.14), [0.0; 3]);
        // 2 + sin(2 pi t) against symbolic derivatives
        use std::f64::consts::PI;
        for &t in &[0.0, 0.1, 0.37] {
            let tau = [2.0 + (2.0 * PI * t).sin(), 2.0 * PI * (2.0 * PI * t).cos(), -4.0 * PI * PI * (2.0 * PI * t).sin()];
            let th = theta_des(&tau, 0.0, 0.0, 0.0, 0.14);
            assert_relative_eq!(th[0], (2.0 + (2.0 * PI * t).sin()) / 0.14, max_relative = 1e-12);
            assert_relative_eq!(th[1], 2.0 * PI * (2.0 * PI * t).cos() / 0.14, max_relative = 1e-12);
        }
    }

    #[test]
    fn position_error_channels() {
        let zero = DisturbanceEstimates::default();
        assert_eq!(position_errors(&PlantState::default(), &zero, &[0.0; 5], &table()), [0.0; 4]);
        let e = position_errors(&PlantState::new(0.0, 0.0, 0.001, 0.0), &zero, &[0.0; 5], &table());
        assert_relative_eq!(e[2], -35.0, max_relative = 1e-12);
    }

    #[test]
    fn sliding_variables() {
        assert_eq!(sliding_variable_position(&[0.0; 4], &[1.0, 2.0, 3.0]), 0.0);
        assert_eq!(sliding_variable_position(&[1.0, 0.0, 0.0, 0.0], &[8.0, 0.0, 0.0]), 8.0);
        assert_eq!(sliding_variable_force(0.0, 0.0, 5.0), 0.0);
        assert_eq!(sliding_variable_force(1.0, 0.0, 10.0), 10.0);
        assert_eq!(continuous_sliding_force(0.0, 0.0, 1.0, &[3.0, 4.0]), 1.0);
        // e = exp(-c0 t) lies on the force surface
        let c0: f64 = 7.0;
        for t in [0.0f64, 0.2, 1.0] {
            let e = (-c0 * t).exp();
            assert!(sliding_variable_force(e, -c0 * e, c0).abs() < 1e-15);
        }
    }

    #[test]
    fn discontinuous_amplitudes() {
        let alpha = position_alpha(&table());
        assert_relative_eq!(alpha, 1.590_909_090_909e10, max_relative = 1e-9);
        assert_relative_eq!(0.001 / alpha, 6.286e-14, max_relative = 1e-3);
        assert_relative_eq!(table().motor_inertia * 0.0035, 7.7e-9, max_relative = 1e-12);

        let cfg = PositionControllerConfig::from_bandwidth(100.0, 0.001);
        let out = position_control(&PlantState::default(), &DisturbanceEstimates::default(), &[0.0; 5], &cfg, &table()).unwrap();
        assert_eq!(out.tau_m, 0.0);
        let f = force_control(0.0, 0.0, &[0.0; 3], 0.0, &ForceControllerConfig::new(50.0, 0.0035), 2.2e-6).unwrap();
        assert_eq!(f.tau_m, 0.0);
    }

    #[test]
    fn config_validation() {
        let mut cfg = PositionControllerConfig::from_bandwidth(100.0, 0.001);
        assert!(cfg.validate().is_ok());
        cfg.rho = 0.0;
        assert!(cfg.validate().is_err());
        cfg.rho = 1.0;
        cfg.law = SwitchLaw::Quasi { epsilon: 0.0 };
        assert!(cfg.validate().is_err());
        cfg.law = SwitchLaw::Continuous;
        cfg.continuous[2] = -1.0;
        assert!(cfg.validate().is_err());
        let mut f = ForceControllerConfig::new(50.0, 0.0035);
        f.c0 = -1.0;
        assert!(f.validate().is_err());
    }

    #[test]
    fn held_output_on_non_finite_estimates() {
        let mut ctl = PositionController::new(PositionControllerConfig::from_bandwidth(100.0, 1.0)).unwrap();
        let m = Measurement { state: PlantState::new(0.0, 0.0, 0.01, 0.0), ..Default::default() };
        let good = ctl.step(&m, &DisturbanceEstimates::default(), &[0.0; 5], &table(), 5e-4);
        let bad = DisturbanceEstimates { d2: f64::NAN, ..Default::default() };
        let held = ctl.step(&m, &bad, &[0.0; 5], &table(), 5e-4);
        assert!(held.held);
        assert_eq!(held.tau_m, good.tau_m);
    }

    proptest! {
        /// With c = (g^3, 3g^2, 3g), e(t) = e0 exp(-g t) is on the surface.
        #[test]
        fn surface_factorization(g in 0.1..500.0f64, e0 in -1.0..1.0f64, t in 0.0..0.05f64) {
            let c = PositionControllerConfig::from_bandwidth(g, 1.0).c;
            let e = e0 * (-g * t).exp();
            let errs = [e, -g * e, g * g * e, -g * g * g * e];
            let scale = g.powi(3) * e.abs() + 1e-300;
            prop_assert!(sliding_variable_position(&errs, &c).abs() <= 1e-12 * scale);
        }

        /// Applying the law drives sigma_dot to -rho sgn(sigma) when estimates are exact:
        /// beta computed from estimates matches a finite-difference oracle of sigma.
        #[test]
        fn sigma_rate_matches_beta(x in prop::array::uniform4(-0.5..0.5f64), tau in -1e-3..1e-3f64,
                                   r in prop::array::uniform5(-1.0..1.0f64), g in 10.0..200.0f64) {
            let p = table();
            let c = PositionControllerConfig::from_bandwidth(g, 1.0).c;
            // constant-disturbance-free nominal plant: d2 = kl x1, d4 = km (x3 - x1)
            let est_at = |s: &PlantState| DisturbanceEstimates::from_vectors(
                &p, &s.to_vector(), nalgebra::Vector4::zeros(), nalgebra::Vector4::zeros(), nalgebra::Vector4::zeros());
            let s0 = PlantState::new(x[0], x[1], x[2], x[3]);
            let kl = p.link_gain();
            let km = p.stiffness / p.motor_inertia;
            let q_ddot = kl * (s0.theta - s0.q);
            let th_ddot = tau / p.motor_inertia - km * (s0.theta - s0.q);
            let h = 1e-7;
            let s1 = PlantState::new(s0.q + h * s0.q_dot, s0.q_dot + h * q_ddot, s0.theta + h * s0.theta_dot, s0.theta_dot + h * th_ddot);
            let refs1 = [r[0] + h * r[1], r[1] + h * r[2], r[2] + h * r[3], r[3] + h * r[4], r[4]];
            let refs0 = [r[0], r[1], r[2], r[3], r[4]];
            let sig = |s: &PlantState, rf: &[f64; 5]| sliding_variable_position(&position_errors(s, &est_at(s), rf, &p), &c);
            let fd = (sig(&s1, &refs1) - sig(&s0, &refs0)) / h;
            let model = -position_alpha(&p) * tau + position_beta(&s0, &est_at(&s0), &refs0, &c, &p);
            prop_assert!((fd - model).abs() <= 1e-4 * model.abs().max(1e6), "{} vs {}", fd, model);
        }

        #[test]
        fn quasi_converges_to_discontinuous(sigma in prop_oneof![-1e3..-1e-2f64, 1e-2..1e3f64]) {
            let mut prev = f64::INFINITY;
            for eps in [1e-2, 1e-4, 1e-6, 1e-8] {
                let gap = (quasi_sign(sigma, eps).unwrap() - sgn(sigma)).abs();
                prop_assert!(gap <= prev);
                prev = gap;
            }
            prop_assert!(prev < 1e-5);
        }

        #[test]
        fn quasi_sign_is_bounded_and_odd(sigma in -1e6..1e6f64, eps in 1e-9..1e3f64) {
            let v = quasi_sign(sigma, eps).unwrap();
            prop_assert!(v.abs() < 1.0);
            prop_assert_eq!(v, -quasi_sign(-sigma, eps).unwrap());
        }
    }
}
