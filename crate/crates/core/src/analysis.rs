//! Metrics and property checks computed from a [`Trace`].
//!
//! Everything here is a pure function of the trace, so a saved trace gives
//! the same report bit for bit.

use std::fmt::Write as _;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::{Trace, TraceMode};
use crate::smc::reaching_time_bound;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("empty analysis window {start}..{end} (trace has {len} samples)")]
    EmptyWindow { start: usize, end: usize, len: usize },
}

fn check_window(len: usize, w: &Range<usize>) -> Result<(), AnalysisError> {
    if w.start >= w.end || w.end > len {
        return Err(AnalysisError::EmptyWindow { start: w.start, end: w.end, len });
    }
    Ok(())
}

/// Root mean square of `err[window]`.
pub fn rmse(err: &[f64], window: Range<usize>) -> Result<f64, AnalysisError> {
    check_window(err.len(), &window)?;
    let n = window.len() as f64;
    Ok((err[window].iter().map(|e| e * e).sum::<f64>() / n).sqrt())
}

/// Total variation of the torque per second, `sum |dtau| / ((n - 1) dt)`.
/// Fewer than two samples give 0.
pub fn chattering_index(tau: &[f64], dt: f64) -> f64 {
    if tau.len() < 2 {
        return 0.0;
    }
    let tv: f64 = tau.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
    tv / ((tau.len() - 1) as f64 * dt)
}

/// Discrete stand-in for `sigma = 0`: three times the largest per-step
/// change of `sigma` inside `window`.
pub fn boundary_layer(sigma: &[f64], window: Range<usize>) -> f64 {
    let end = window.end.min(sigma.len());
    if window.start + 1 >= end {
        return 0.0;
    }
    3.0 * sigma[window.start..end].windows(2).map(|w| (w[1] - w[0]).abs()).fold(0.0, f64::max)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReachingReport {
    /// First time `|sigma| < boundary_layer`; `None` if never.
    pub reaching_time: Option<f64>,
    /// `sqrt(2) / mu * |sigma(t0)| + 2 dt`.
    pub bound: f64,
    pub pass: bool,
}

pub fn verify_reaching(sigma: &[f64], dt: f64, mu: f64, boundary_layer: f64) -> ReachingReport {
    let s0 = sigma.first().copied().unwrap_or(0.0);
    let bound = reaching_time_bound(mu, s0) + 2.0 * dt;
    let reaching_time = if s0.abs() <= boundary_layer {
        Some(0.0)
    } else {
        sigma.iter().position(|s| s.abs() < boundary_layer).map(|i| i as f64 * dt)
    };
    ReachingReport { reaching_time, bound, pass: reaching_time.is_some_and(|t| t <= bound) }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LyapunovReport {
    pub violations: usize,
    /// Steps where the switching term dominated the drift outside the layer.
    pub checked: usize,
    pub first_violation: Option<usize>,
    /// Steps outside the layer where `V` grew while the premise did not hold.
    pub unguarded_increases: usize,
}

/// Relative share of the switching term set aside for the sampled
/// reconstruction of `beta - beta_hat` before the premise counts as met.
pub const PREMISE_MARGIN: f64 = 1e-3;

/// Counts steps where `V = sigma^2 / 2` failed to decrease although
/// `|sigma| > boundary_layer` and the switching term outweighed the drift
/// mismatch `beta - beta_hat` by more than [`PREMISE_MARGIN`].
pub fn verify_lyapunov(sigma: &[f64], beta_err: &[f64], switching: &[f64], boundary_layer: f64) -> LyapunovReport {
    let n = sigma.len().min(beta_err.len()).min(switching.len());
    let mut r = LyapunovReport::default();
    for i in 0..n.saturating_sub(1) {
        if sigma[i].abs() <= boundary_layer {
            continue;
        }
        let grew = sigma[i + 1].abs() >= sigma[i].abs();
        if switching[i].abs() * (1.0 - PREMISE_MARGIN) > beta_err[i].abs() {
            r.checked += 1;
            if grew {
                r.violations += 1;
                r.first_violation.get_or_insert(i);
            }
        } else if grew {
            r.unguarded_increases += 1;
        }
    }
    r
}

/// Estimation error against the input-to-state radius of the observer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObserverErrorReport {
    /// Per channel `max |tau_dis_hat - tau_dis|` over the window.
    pub max_error: [f64; 4],
    /// Largest norm of the stacked (value, rate, acceleration) error.
    pub steady_error: f64,
    /// `sqrt(3) * max |d^3 tau_dis / dt^3|`: the third derivative drives all
    /// three error blocks.
    pub delta: f64,
    pub lambda_min: f64,
    /// `delta / lambda_min`.
    pub iss_bound: f64,
}

impl ObserverErrorReport {
    /// `steady_error / iss_bound`; zero over zero counts as 0.
    pub fn ratio(&self) -> f64 {
        if self.iss_bound > 0.0 {
            self.steady_error / self.iss_bound
        } else if self.steady_error == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

pub fn observer_error_report(trace: &Trace, window: Range<usize>) -> Result<ObserverErrorReport, AnalysisError> {
    check_window(trace.len(), &window)?;
    let mut max_error = [0.0f64; 4];
    let mut steady: f64 = 0.0;
    for i in window.clone() {
        let mut sq = 0.0;
        for (hat, tru) in [
            (&trace.tau_dis_hat, &trace.tau_dis_true),
            (&trace.tau_dis_dot_hat, &trace.tau_dis_dot_true),
            (&trace.tau_dis_ddot_hat, &trace.tau_dis_ddot_true),
        ] {
            for c in 0..4 {
                let e = hat[i][c] - tru[i][c];
                sq += e * e;
            }
        }
        for (c, m) in max_error.iter_mut().enumerate() {
            *m = m.max((trace.tau_dis_hat[i][c] - trace.tau_dis_true[i][c]).abs());
        }
        steady = steady.max(sq.sqrt());
    }
    let dt = trace.meta.dt;
    let dd = &trace.tau_dis_ddot_true;
    let lo = window.start.max(1);
    let hi = window.end.min(trace.len().saturating_sub(1));
    let mut jerk: f64 = 0.0;
    for i in lo..hi {
        let n: f64 = (0..4).map(|c| ((dd[i + 1][c] - dd[i - 1][c]) / (2.0 * dt)).powi(2)).sum::<f64>().sqrt();
        jerk = jerk.max(n);
    }
    let delta = 3f64.sqrt() * jerk;
    let lambda_min = trace.meta.lambda_min;
    Ok(ObserverErrorReport { max_error, steady_error: steady, delta, lambda_min, iss_bound: delta / lambda_min })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Tracking RMSE after the settle time (rad or N m).
    pub rmse_tracking: f64,
    /// Torque total variation per second after the settle time (N m / s).
    pub chattering_index: f64,
    pub reaching_time: Option<f64>,
    pub reaching_bound: f64,
    pub reaching_pass: bool,
    pub boundary_layer: f64,
    pub lyapunov_violations: usize,
    /// `max |d2_hat - d2|`, `max |d4_hat - d4|` after the settle time.
    pub max_estimation_error: [f64; 2],
    /// `max |beta - beta_hat|` over the whole run.
    pub delta_beta_measured: f64,
    pub rho: f64,
    pub lambda_min: f64,
    pub held_samples: usize,
}

impl MetricsReport {
    pub fn from_trace(trace: &Trace, settle: f64) -> Result<Self, AnalysisError> {
        let w = trace.index_at(settle)..trace.len();
        check_window(trace.len(), &w)?;
        let dt = trace.meta.dt;
        let err = trace.tracking_error();
        let closed = trace.meta.mode != TraceMode::OpenLoop;
        let bl = boundary_layer(&trace.sigma_true, w.clone());
        let reach = verify_reaching(&trace.sigma_true, dt, trace.meta.mu, bl);
        let lyap = verify_lyapunov(&trace.sigma_true, &trace.beta_err, &trace.switching, bl);
        let max_abs_diff =
            |a: &[f64], b: &[f64]| a[w.clone()].iter().zip(&b[w.clone()]).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        Ok(Self {
            rmse_tracking: if closed { rmse(&err, w.clone())? } else { 0.0 },
            chattering_index: chattering_index(&trace.tau_m[w.clone()], dt),
            reaching_time: if closed { reach.reaching_time } else { None },
            reaching_bound: reach.bound,
            reaching_pass: !closed || reach.pass,
            boundary_layer: bl,
            lyapunov_violations: lyap.violations,
            max_estimation_error: [max_abs_diff(&trace.d2_hat, &trace.d2_true), max_abs_diff(&trace.d4_hat, &trace.d4_true)],
            delta_beta_measured: trace.beta_err.iter().fold(0.0, |m, b| m.max(b.abs())),
            rho: trace.meta.rho,
            lambda_min: trace.meta.lambda_min,
            held_samples: trace.held_samples,
        })
    }

    /// Flat `key = value` summary.
    pub fn to_text(&self) -> String {
        let mut o = String::new();
        let opt = |x: Option<f64>| x.map_or("none".to_string(), |v| format!("{v:.9e}"));
        let _ = writeln!(o, "rmse_tracking = {:.9e}", self.rmse_tracking);
        let _ = writeln!(o, "chattering_index = {:.9e}", self.chattering_index);
        let _ = writeln!(o, "reaching_time = {}", opt(self.reaching_time));
        let _ = writeln!(o, "reaching_bound = {:.9e}", self.reaching_bound);
        let _ = writeln!(o, "reaching_pass = {}", self.reaching_pass);
        let _ = writeln!(o, "boundary_layer = {:.9e}", self.boundary_layer);
        let _ = writeln!(o, "lyapunov_violations = {}", self.lyapunov_violations);
        let _ = writeln!(o, "max_estimation_error.d2 = {:.9e}", self.max_estimation_error[0]);
        let _ = writeln!(o, "max_estimation_error.d4 = {:.9e}", self.max_estimation_error[1]);
        let _ = writeln!(o, "delta_beta_measured = {:.9e}", self.delta_beta_measured);
        let _ = writeln!(o, "rho = {:.9e}", self.rho);
        let _ = writeln!(o, "lambda_min = {:.9e}", self.lambda_min);
        let _ = writeln!(o, "held_samples = {}", self.held_samples);
        o
    }
}
