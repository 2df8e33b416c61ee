//! The acceptance criteria as executable checks. Every tolerance is a named
//! constant in [`tol`]; each check returns its measured numbers in `detail`
//! so a failing line explains itself.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::analysis::{boundary_layer, observer_error_report, rmse, verify_lyapunov, LyapunovReport, MetricsReport};
use crate::csv::trace_to_string;
use crate::dob::{ObserverGains, ZeroOrderDob};
use crate::plant::SeaParams;
use crate::scenario::{bundled, Scenario, BUNDLED};
use crate::sim::{run_scenario, simulate, Trace};
use crate::smc::{position_alpha, smc_gain_from_bound};
use crate::sweep::{sweep, with_override};

pub mod tol {
    /// Relative error of each observer pole against `-g`.
    pub const POLE_REL: f64 = 1e-6;
    pub const POLE_RUNTIME_S: f64 = 1.0;
    /// Extracted estimate within this fraction of the true step...
    pub const STEP_REL: f64 = 0.01;
    /// ...no later than this after the step (s).
    pub const STEP_SETTLE_S: f64 = 0.02;
    /// Pointwise relative deviation of the zero-order error from `exp(-g t)`.
    pub const ZERO_ORDER_REL: f64 = 0.05;
    pub const OBSERVER_RUNTIME_S: f64 = 5.0;
    /// Steady estimation error over the input-to-state radius.
    pub const ISS_FACTOR: f64 = 2.0;
    pub const ISS_RUNTIME_S: f64 = 5.0;
    /// Position tracking accuracy after the settle time (rad).
    pub const POSITION_RMSE: f64 = 0.01;
    /// Conventional over full-controller RMSE.
    pub const ABLATION_RATIO: f64 = 5.0;
    pub const ABLATION_RUNTIME_S: f64 = 30.0;
    pub const REACHING_SEEDS: u64 = 10;
    pub const REACHING_MAX_ITER: usize = 6;
    /// The gain is designed for `(1 + margin)` times the measured mismatch.
    pub const REACHING_MARGIN: f64 = 0.05;
    /// Allowed Lyapunov violations on bundled scenarios.
    pub const LYAPUNOV_VIOLATIONS: usize = 0;
    /// Required ratio of the switching gains without and with the observer.
    pub const GAIN_RATIO: f64 = 10.0;
    /// Force tracking RMSE as a fraction of the 1 N m oscillation.
    pub const FORCE_RMSE_FRACTION: f64 = 0.05;
    /// Steady force error as a fraction of the 5 N m step.
    pub const FORCE_STEADY_FRACTION: f64 = 0.01;
    /// Accepted error ratio per halving of dt for classical RK4.
    pub const RK4_RATIO_MIN: f64 = 14.0;
    pub const RK4_RATIO_MAX: f64 = 18.0;
}

/// Quasi-SMC widths of the trade-off sweep.
pub const EPSILONS: [f64; 3] = [1e-3, 1e-2, 1e-1];
/// Observer bandwidths of the estimation sweep (rad/s).
pub const G_DOB_SWEEP: [f64; 4] = [100.0, 200.0, 400.0, 800.0];

#[derive(Clone, Debug, PartialEq)]
pub struct CriterionResult {
    pub id: u8,
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
    pub elapsed_s: f64,
}

impl CriterionResult {
    pub fn line(&self) -> String {
        format!(
            "criterion {:>2} {} {} ({:.2} s): {}",
            self.id,
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.elapsed_s,
            self.detail
        )
    }
}

fn timed(id: u8, name: &'static str, f: impl FnOnce() -> (bool, String)) -> CriterionResult {
    let t0 = Instant::now();
    let (pass, detail) = f();
    CriterionResult { id, name, pass, detail, elapsed_s: t0.elapsed().as_secs_f64() }
}

fn parse(text: &str) -> Scenario {
    Scenario::parse(text).expect("built-in check scenario")
}

fn metrics(sc: &Scenario) -> Result<(Trace, MetricsReport), String> {
    let tr = run_scenario(sc).map_err(|e| e.to_string())?;
    let m = MetricsReport::from_trace(&tr, sc.settle).map_err(|e| e.to_string())?;
    Ok((tr, m))
}

pub const POLE_BANDWIDTHS: [f64; 3] = [100.0, 500.0, 1000.0];

/// Largest relative distance of the tuned observer poles from `-g`.
pub fn pole_errors() -> Vec<(f64, f64)> {
    POLE_BANDWIDTHS
        .iter()
        .map(|&g| {
            let roots = ObserverGains::tune(g).expect("positive bandwidth").roots();
            let err = roots.iter().map(|r| (r.re + g).hypot(r.im) / g).fold(0.0, f64::max);
            (g, err)
        })
        .collect()
}

pub fn criterion_1() -> CriterionResult {
    let t0 = Instant::now();
    let errs = pole_errors();
    let elapsed = t0.elapsed().as_secs_f64();
    let ok = errs.iter().all(|(_, e)| *e <= tol::POLE_REL) && elapsed < tol::POLE_RUNTIME_S;
    let d = errs.iter().map(|(g, e)| format!("g={g}: {e:.2e}")).collect::<Vec<_>>().join(", ");
    CriterionResult {
        id: 1,
        name: "observer pole placement",
        pass: ok,
        detail: format!("max relative pole error {d} (tol {:.0e})", tol::POLE_REL),
        elapsed_s: elapsed,
    }
}

pub const STEP_SCENARIO: &str = "\
name = observer_step
control.mode = open_loop
observer.g_dob = 500
disturbance.link.0.kind = step
disturbance.link.0.amplitude = 0.01
disturbance.link.0.at = 0.05
sim.dt = 0.0005
sim.duration = 0.2
";

/// Worst relative error of the link-channel estimate from `STEP_SETTLE_S`
/// after the step to the end of the run.
pub fn step_estimate_error() -> Result<f64, String> {
    let sc = parse(STEP_SCENARIO);
    let tr = run_scenario(&sc).map_err(|e| e.to_string())?;
    let from = tr.index_at(0.05 + tol::STEP_SETTLE_S);
    let truth = tr.tau_dis_true[tr.len() - 1][1];
    Ok((from..tr.len()).map(|i| (tr.tau_dis_hat[i][1] - tr.tau_dis_true[i][1]).abs() / truth.abs()).fold(0.0, f64::max))
}

/// Zero-order observer under a constant disturbance with the motor velocity it
/// produces; returns the worst pointwise deviation of the estimation error
/// from `d exp(-g t)` over five time constants.
pub fn zero_order_decay_error(g: f64, dt: f64) -> f64 {
    let jm = SeaParams::standard().motor_inertia;
    let d = 1000.0;
    let x2 = |t: f64| -d * t;
    let mut dob = ZeroOrderDob::new(g, 0.0).expect("positive bandwidth");
    let steps = (5.0 / (g * dt)).ceil() as usize;
    let mut worst: f64 = 0.0;
    for n in 0..steps {
        let t = n as f64 * dt;
        dob.advance(jm, x2(t), x2(t + dt), 0.0, dt).expect("finite");
        let t1 = t + dt;
        let err = d - dob.estimate(x2(t1));
        let want = d * (-g * t1).exp();
        worst = worst.max((err - want).abs() / want);
    }
    worst
}

pub fn criterion_2() -> CriterionResult {
    timed(2, "observer convergence", || {
        let step = step_estimate_error();
        let decay = zero_order_decay_error(500.0, 5e-4);
        let ok_step = step.as_ref().is_ok_and(|e| *e <= tol::STEP_REL);
        let ok = ok_step && decay <= tol::ZERO_ORDER_REL;
        let s = match step {
            Ok(e) => format!("{e:.2e}"),
            Err(e) => e,
        };
        (
            ok,
            format!(
                "step estimate error after {} ms {s} (tol {}), zero-order deviation from exp(-gt) {decay:.2e} (tol {})",
                tol::STEP_SETTLE_S * 1e3,
                tol::STEP_REL,
                tol::ZERO_ORDER_REL
            ),
        )
    })
}

pub const ISS_SCENARIO: &str = "\
name = observer_sine
control.mode = open_loop
observer.g_dob = 500
disturbance.link.0.kind = sine
disturbance.link.0.amplitude = 0.005
disturbance.link.0.freq_hz = 1
disturbance.link.0.phase = 1.5707963267948966
sim.dt = 0.0001
sim.duration = 3
analysis.settle = 1
";

pub fn iss_report() -> Result<crate::analysis::ObserverErrorReport, String> {
    let sc = parse(ISS_SCENARIO);
    let tr = run_scenario(&sc).map_err(|e| e.to_string())?;
    observer_error_report(&tr, tr.index_at(sc.settle)..tr.len()).map_err(|e| e.to_string())
}

pub fn criterion_3() -> CriterionResult {
    timed(3, "input-to-state bound", || match iss_report() {
        Err(e) => (false, e),
        Ok(r) => {
            let ok = r.steady_error <= tol::ISS_FACTOR * r.iss_bound;
            (
                ok,
                format!(
                    "steady error {:.3e}, bound {:.3e} (delta {:.3e} / lambda_min {}), ratio {:.3} (tol {})",
                    r.steady_error,
                    r.iss_bound,
                    r.delta,
                    r.lambda_min,
                    r.ratio(),
                    tol::ISS_FACTOR
                ),
            )
        }
    })
}

/// Tracking RMSE of the full controller and of the conventional one.
pub fn ablation_rmse() -> Result<(f64, f64), String> {
    let full = metrics(&bundled("fig4b").map_err(|e| e.to_string())?)?.1.rmse_tracking;
    let conv = metrics(&bundled("fig4a").map_err(|e| e.to_string())?)?.1.rmse_tracking;
    Ok((full, conv))
}

pub fn criterion_4() -> CriterionResult {
    let r = timed(4, "conventional vs observer-based SMC", || match ablation_rmse() {
        Err(e) => (false, e),
        Ok((full, conv)) => (
            full < tol::POSITION_RMSE && conv >= tol::ABLATION_RATIO * full,
            format!(
                "RMSE full {full:.3e} rad (tol {}), conventional {conv:.3e} rad, ratio {:.1} (tol {})",
                tol::POSITION_RMSE,
                conv / full,
                tol::ABLATION_RATIO
            ),
        ),
    });
    CriterionResult { pass: r.pass && r.elapsed_s < tol::ABLATION_RUNTIME_S, ..r }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReachingCase {
    pub seed: u64,
    pub sigma0: f64,
    pub delta_beta: f64,
    pub rho: f64,
    pub mu: f64,
    pub reaching_time: Option<f64>,
    pub bound: f64,
    pub pass: bool,
}

/// Initial condition of reaching case `seed`: link offset, spring deflection
/// and both velocities drawn uniformly.
pub fn reaching_initial(seed: u64) -> [f64; 4] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = rng.gen_range(-0.5..0.5);
    let defl = rng.gen_range(-0.2..0.2);
    let qd = rng.gen_range(-5.0..5.0);
    let thd = qd + rng.gen_range(-20.0..20.0);
    [q, qd, q + defl, thd]
}

/// Runs case `seed` with `rho = delta_beta + mu / sqrt(2)`, where `delta_beta`
/// is the measured `max |beta - beta_hat|` plus a fixed margin, re-measured
/// until the run's own mismatch no longer exceeds the value the gain was
/// built from. `mu` is chosen as
/// `sqrt(2) delta_beta` so that the reaching bound is not vacuous.
pub fn reaching_case(seed: u64) -> Result<ReachingCase, String> {
    let base = bundled("fig4b").map_err(|e| e.to_string())?;
    let [q, qd, th, thd] = reaching_initial(seed);
    let mut sc = base;
    sc.initial = crate::plant::PlantState::new(q, qd, th, thd);
    sc.sim.duration = 0.5;
    sc.settle = 0.25;
    let alpha = position_alpha(&sc.plant.nominal);
    let mut delta = metrics(&sc)?.1.delta_beta_measured * (1.0 + tol::REACHING_MARGIN);
    for _ in 0..tol::REACHING_MAX_ITER {
        let mu = 2f64.sqrt() * delta;
        let rho = smc_gain_from_bound(delta, mu).map_err(|e| e.to_string())?;
        let cfg = sc.position_config_mut().expect("position scenario");
        cfg.rho = rho;
        cfg.mu = mu;
        let (tr, m) = metrics(&sc)?;
        if m.delta_beta_measured <= delta {
            return Ok(ReachingCase {
                seed,
                sigma0: tr.sigma_true[0],
                delta_beta: delta,
                rho,
                mu,
                reaching_time: m.reaching_time,
                bound: m.reaching_bound,
                pass: m.reaching_pass,
            });
        }
        delta = m.delta_beta_measured * (1.0 + tol::REACHING_MARGIN);
    }
    Err(format!("seed {seed}: delta_beta did not settle below the gain (last {delta:.3e}, rho_torque {:.3e})", delta / alpha))
}

pub fn criterion_5() -> CriterionResult {
    timed(5, "finite-time reaching", || {
        let seeds: Vec<u64> = (0..tol::REACHING_SEEDS).collect();
        let cases = crate::par::map(&seeds, |&s| reaching_case(s));
        let mut fails = Vec::new();
        let mut slack: f64 = f64::INFINITY;
        for c in &cases {
            match c {
                Err(e) => fails.push(e.clone()),
                Ok(c) if !c.pass => fails.push(format!("seed {}: reached {:?} > bound {:.3e}", c.seed, c.reaching_time, c.bound)),
                Ok(c) => slack = slack.min(c.bound - c.reaching_time.unwrap_or(0.0)),
            }
        }
        let ok = fails.is_empty();
        let d = if ok {
            format!("{} initial conditions reached within the bound, smallest margin {slack:.3e} s", cases.len())
        } else {
            fails.join("; ")
        };
        (ok, d)
    })
}

/// Under-gained negative control: conventional SMC with a switching torque of 0.1 mN m.
pub fn undergained_scenario() -> Scenario {
    with_override(&bundled("fig4a").expect("bundled"), "control.rho_torque", "1e-4").expect("valid override")
}

pub fn lyapunov_counts() -> Vec<(String, Result<usize, String>)> {
    let names: Vec<&str> = BUNDLED.iter().map(|(n, _)| *n).collect();
    crate::par::map(&names, |n| {
        let r = bundled(n).map_err(|e| e.to_string()).and_then(|sc| metrics(&sc)).map(|(_, m)| m.lyapunov_violations);
        (n.to_string(), r)
    })
}

/// Lyapunov check of one scenario with the layer measured after its settle time.
pub fn lyapunov_report(sc: &Scenario) -> Result<LyapunovReport, String> {
    let out = simulate(sc).map_err(|e| e.to_string())?;
    let tr = &out.trace;
    let settle = sc.settle.min(tr.t[tr.len() - 1] / 2.0);
    let bl = boundary_layer(&tr.sigma_true, tr.index_at(settle)..tr.len());
    Ok(verify_lyapunov(&tr.sigma_true, &tr.beta_err, &tr.switching, bl))
}

/// Position controller with the switching term applied against `sigma`.
pub fn flipped_scenario() -> Scenario {
    with_override(&bundled("fig4b").expect("bundled"), "control.ablation", "flip_switch_sign").expect("valid override")
}

pub fn criterion_6() -> CriterionResult {
    timed(6, "Lyapunov monotonicity", || {
        let counts = lyapunov_counts();
        let clean = counts.iter().all(|(_, r)| r.as_ref().is_ok_and(|v| *v == tol::LYAPUNOV_VIOLATIONS));
        // the check must fire on a controller that breaks the inequality...
        let flipped = lyapunov_report(&flipped_scenario());
        let sensitive = flipped.as_ref().is_ok_and(|r| r.violations >= 1);
        // ...and growth of V under too small a gain must fall outside the premise
        let under = lyapunov_report(&undergained_scenario());
        let gated = under.as_ref().is_ok_and(|r| r.violations == 0 && r.unguarded_increases >= 1);
        let list = counts
            .iter()
            .map(|(n, r)| match r {
                Ok(v) => format!("{n}={v}"),
                Err(e) => format!("{n}: {e}"),
            })
            .collect::<Vec<_>>()
            .join(" ");
        let f = match &flipped {
            Ok(r) => format!("sign-flipped control {} violations (needs >= 1)", r.violations),
            Err(e) => format!("sign-flipped control: {e}"),
        };
        let u = match &under {
            Ok(r) => format!(
                "under-gained control {} violations, {} increases without the premise (needs 0 and >= 1)",
                r.violations, r.unguarded_increases
            ),
            Err(e) => format!("under-gained control: {e}"),
        };
        (clean && sensitive && gated, format!("violations {list}; {f}; {u}"))
    })
}

/// `(epsilon, rmse, chattering)` over [`EPSILONS`] on the Fig. 5 configuration.
pub fn epsilon_sweep() -> Result<Vec<(f64, f64, f64)>, String> {
    let base = bundled("fig5a").map_err(|e| e.to_string())?;
    let vals: Vec<String> = EPSILONS.iter().map(|e| format!("{e:?}")).collect();
    let rows = sweep(&base, "control.epsilon", &vals).map_err(|e| e.to_string())?;
    rows.iter()
        .zip(EPSILONS)
        .map(|(r, e)| match (&r.metrics, &r.error) {
            (Some(m), None) => Ok((e, m.rmse_tracking, m.chattering_index)),
            (_, err) => Err(format!("epsilon {e}: {}", err.as_deref().unwrap_or("failed"))),
        })
        .collect()
}

pub fn criterion_7() -> CriterionResult {
    timed(7, "quasi-SMC trade-off", || match epsilon_sweep() {
        Err(e) => (false, e),
        Ok(rows) => {
            let rmse_ok = rows.windows(2).all(|w| w[1].1 >= w[0].1);
            let chat_ok = rows.windows(2).all(|w| w[1].2 <= w[0].2);
            let d =
                rows.iter().map(|(e, r, c)| format!("eps {e}: rmse {r:.3e} chattering {c:.5e}")).collect::<Vec<_>>().join(", ");
            (rmse_ok && chat_ok, format!("{d}; rmse nondecreasing {rmse_ok}, chattering nonincreasing {chat_ok}"))
        }
    })
}

/// Switching torques (N m) tried when searching for the smallest gain that
/// reaches the position accuracy: quarter decades from 1e-7 to 1.
pub fn rho_grid() -> Vec<f64> {
    (0..=28).map(|k| 10f64.powf(-7.0 + 0.25 * f64::from(k))).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct GainSearch {
    /// `(rho_torque, rmse, chattering)` per grid point that completed.
    pub points: Vec<(f64, f64, f64)>,
    /// Smallest grid gain with RMSE below [`tol::POSITION_RMSE`].
    pub needed: Option<(f64, f64)>,
    /// Grid gain with the lowest RMSE and its chattering.
    pub best: Option<(f64, f64, f64)>,
}

pub fn gain_search(name: &str) -> Result<GainSearch, String> {
    let base = bundled(name).map_err(|e| e.to_string())?;
    let grid = rho_grid();
    let vals: Vec<String> = grid.iter().map(|r| format!("{r:?}")).collect();
    let rows = sweep(&base, "control.rho_torque", &vals).map_err(|e| e.to_string())?;
    let points: Vec<(f64, f64, f64)> = rows
        .iter()
        .zip(&grid)
        .filter_map(|(r, g)| r.metrics.as_ref().map(|m| (*g, m.rmse_tracking, m.chattering_index)))
        .collect();
    let needed = points.iter().find(|p| p.1 < tol::POSITION_RMSE).map(|p| (p.0, p.2));
    let best = points.iter().copied().min_by(|a, b| a.1.total_cmp(&b.1));
    Ok(GainSearch { points, needed, best })
}

pub fn criterion_8() -> CriterionResult {
    timed(8, "chattering suppression by the observer", || {
        let (dob, conv) = match (gain_search("fig4b"), gain_search("fig4a")) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(e), _) | (_, Err(e)) => return (false, e),
        };
        let Some((rho_dob, chat_dob)) = dob.needed else {
            return (false, "observer-based SMC never reached the accuracy on the grid".into());
        };
        // without the observer the comparison point is the gain it needs or,
        // if none on the grid suffices, its most accurate gain
        let (rho_conv, chat_conv, conv_desc) = match (conv.needed, conv.best) {
            (Some((r, c)), _) => (r, c, format!("needs {r:.3e} N m")),
            (None, Some((r, rm, c))) => (
                f64::INFINITY,
                c,
                format!("never below {} rad up to 1 N m (best RMSE {rm:.3e} at {r:.3e} N m)", tol::POSITION_RMSE),
            ),
            (None, None) => return (false, "conventional runs all failed".into()),
        };
        let ratio = rho_conv / rho_dob;
        let ok = ratio >= tol::GAIN_RATIO && chat_dob < chat_conv;
        (
            ok,
            format!(
                "with observer needs {rho_dob:.3e} N m (chattering {chat_dob:.3e}); without {conv_desc} (chattering {chat_conv:.3e}); gain ratio {ratio:.3e} (tol {}), chattering ratio {:.3e}",
                tol::GAIN_RATIO,
                chat_conv / chat_dob
            ),
        )
    })
}

pub fn criterion_9() -> CriterionResult {
    timed(9, "force tracking", || match bundled("fig6a").map_err(|e| e.to_string()).and_then(|sc| metrics(&sc)) {
        Err(e) => (false, e),
        Ok((_, m)) => (
            m.rmse_tracking < tol::FORCE_RMSE_FRACTION,
            format!("RMSE {:.3e} N m (tol {} of 1 N m)", m.rmse_tracking, tol::FORCE_RMSE_FRACTION),
        ),
    })
}

/// `(overshoot, steady relative error)` of the 5 N m regulation run.
pub fn regulation() -> Result<(f64, f64), String> {
    let sc = bundled("fig6b").map_err(|e| e.to_string())?;
    let tr = run_scenario(&sc).map_err(|e| e.to_string())?;
    let target = tr.reference[tr.len() - 1];
    let peak = tr.tau_s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let from = tr.index_at(sc.settle);
    let steady = tr.tau_s[from..].iter().map(|v| (v - target).abs()).fold(0.0, f64::max) / target.abs();
    Ok((peak - target, steady))
}

pub fn criterion_10() -> CriterionResult {
    timed(10, "force regulation overshoot", || match regulation() {
        Err(e) => (false, e),
        Ok((over, steady)) => (
            over > 0.0 && steady < tol::FORCE_STEADY_FRACTION,
            format!("overshoot {over:.4e} N m (needs > 0), steady error {steady:.3e} (tol {})", tol::FORCE_STEADY_FRACTION),
        ),
    })
}

pub const CONVERGENCE_SCENARIO: &str = "\
name = free_oscillation
control.mode = open_loop
disturbance.motor.0.kind = sine
disturbance.motor.0.amplitude = 0.001
disturbance.motor.0.freq_hz = 5
disturbance.link.0.kind = sine
disturbance.link.0.amplitude = 0.002
disturbance.link.0.freq_hz = 3
disturbance.link.0.phase = 0.5
initial.q = 0.01
initial.theta = 0.02
sim.dt = 0.0005
sim.duration = 0.5
";

/// Error ratio per halving of dt at the final state, from runs at dt, dt/2, dt/4.
pub fn convergence_ratio(base_dt: f64) -> Result<f64, String> {
    let finals: Vec<nalgebra::Vector4<f64>> = [1.0, 0.5, 0.25]
        .iter()
        .map(|f| {
            let mut sc = parse(CONVERGENCE_SCENARIO);
            sc.sim.dt = base_dt * f;
            run_scenario(&sc).map(|tr| tr.final_state().to_vector()).map_err(|e| e.to_string())
        })
        .collect::<Result<_, _>>()?;
    Ok((finals[0] - finals[1]).norm() / (finals[1] - finals[2]).norm())
}

pub fn criterion_11() -> CriterionResult {
    timed(11, "determinism and convergence", || {
        let sc = match bundled("fig4b") {
            Ok(sc) => sc,
            Err(e) => return (false, e.to_string()),
        };
        let csv = |sc: &Scenario| run_scenario(sc).map(|t| trace_to_string(&t)).map_err(|e| e.to_string());
        let same = match (csv(&sc), csv(&sc)) {
            (Ok(a), Ok(b)) => a.as_bytes() == b.as_bytes(),
            _ => false,
        };
        let ratio = convergence_ratio(5e-4);
        let conv_ok = ratio.as_ref().is_ok_and(|r| (tol::RK4_RATIO_MIN..=tol::RK4_RATIO_MAX).contains(r));
        (
            same && conv_ok,
            format!(
                "identical CSV bytes {same}; error ratio per halving {} (accepted {}..{})",
                ratio.map_or_else(|e| e, |r| format!("{r:.2}")),
                tol::RK4_RATIO_MIN,
                tol::RK4_RATIO_MAX
            ),
        )
    })
}

pub const CRITERIA: [fn() -> CriterionResult; 11] = [
    criterion_1,
    criterion_2,
    criterion_3,
    criterion_4,
    criterion_5,
    criterion_6,
    criterion_7,
    criterion_8,
    criterion_9,
    criterion_10,
    criterion_11,
];

pub fn run_all() -> Vec<CriterionResult> {
    crate::par::map(&CRITERIA, |f| f())
}

#[derive(Clone, Debug, PartialEq)]
pub struct NegativeControl {
    pub name: &'static str,
    /// The broken configuration was caught by the check it targets.
    pub caught: bool,
    pub detail: String,
}

/// Deliberately broken controllers; each must trip the check it targets.
pub fn negative_controls() -> Vec<NegativeControl> {
    let fig4b = bundled("fig4b").expect("bundled");
    let mut out = Vec::new();

    let (caught, detail) = match lyapunov_report(&flipped_scenario()) {
        Ok(r) => (r.violations > 0, format!("{} Lyapunov violations", r.violations)),
        Err(e) => (false, e),
    };
    out.push(NegativeControl { name: "switching sign flipped", caught, detail });

    let dropped = with_override(&fig4b, "control.ablation", "drop_matched_estimate").expect("valid override");
    let (caught, detail) = match simulate(&dropped) {
        Ok(o) if o.failure.is_some() => (true, format!("diverged: {}", o.failure.unwrap())),
        Ok(o) => {
            let err = o.trace.tracking_error();
            match rmse(&err, o.trace.index_at(dropped.settle)..o.trace.len()) {
                Ok(r) => (r > tol::POSITION_RMSE, format!("RMSE {r:.3e} rad (threshold {})", tol::POSITION_RMSE)),
                Err(e) => (false, e.to_string()),
            }
        }
        Err(e) => (false, e.to_string()),
    };
    out.push(NegativeControl { name: "matched estimate dropped from the drift", caught, detail });

    let (caught, detail) = match lyapunov_report(&undergained_scenario()) {
        Ok(r) => (
            r.unguarded_increases > 0,
            format!("V grew on {} steps outside the layer, all outside the premise", r.unguarded_increases),
        ),
        Err(e) => (false, e),
    };
    out.push(NegativeControl { name: "under-gained conventional SMC", caught, detail });
    out
}

/// Open-loop 1 Hz link disturbance for the bandwidth sweep. The step is finer
/// than the loop rate: at 0.5 ms the integration error of the observer grows
/// like g^3 dt^4 and overtakes the 1/g^3 lag error above g = 200.
pub const ESTIMATION_SCENARIO: &str = "\
name = observer_bandwidth
control.mode = open_loop
disturbance.link.0.kind = sine
disturbance.link.0.amplitude = 0.005
disturbance.link.0.freq_hz = 1
disturbance.link.0.phase = 1.5707963267948966
sim.dt = 0.0001
sim.duration = 3
analysis.settle = 1
";

/// Largest steady link-channel estimation error over [`G_DOB_SWEEP`], taken
/// from the sweep table.
pub fn estimation_sweep() -> Result<Vec<(f64, f64)>, String> {
    let base = parse(ESTIMATION_SCENARIO);
    let vals: Vec<String> = G_DOB_SWEEP.iter().map(|g| format!("{g:?}")).collect();
    let rows = sweep(&base, "observer.g_dob", &vals).map_err(|e| e.to_string())?;
    rows.iter()
        .zip(G_DOB_SWEEP)
        .map(|(r, g)| r.metrics.as_ref().map(|m| (g, m.max_estimation_error[0])).ok_or_else(|| format!("g_dob {g} failed")))
        .collect()
}
