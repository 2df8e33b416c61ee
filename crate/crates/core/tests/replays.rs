use nalgebra::Vector4;
use sea_smc::analysis::chattering_index;
use sea_smc::dob::DisturbanceEstimates;
use sea_smc::plant::{free_motion_derivative, lumped_force_disturbance};
use sea_smc::scenario::bundled;
use sea_smc::signal::{Signal, Waveform};
use sea_smc::sim::ControlMode;
use sea_smc::smc::position_errors;
use sea_smc::sweep::with_override;
use sea_smc::{run_scenario, PlantState, Scenario};

fn state(tr: &sea_smc::Trace, i: usize) -> PlantState {
    PlantState::new(tr.q[i], tr.q_dot[i], tr.theta[i], tr.theta_dot[i])
}

#[test]
fn lumped_force_disturbance_matches_motor_side_reconstruction() {
    // smooth 1 Hz motion from rest: scripted motor torque and a link load
    let sine = |amplitude| Signal::from_waveform(Waveform::Sine { offset: 0.0, amplitude, freq_hz: 1.0, phase: 0.0 });
    let mut sc = Scenario::open_loop("lumped", sine(1e-3));
    sc.disturbance.link = sine(2e-4);
    sc.sim.duration = 2.0;
    let tr = run_scenario(&sc).unwrap();
    let (dt, jm, bm) = (sc.sim.dt, sc.plant.nominal.motor_inertia, sc.plant.nominal.motor_damping);
    let lumped: Vec<f64> = (0..tr.len())
        .map(|i| {
            let s = state(&tr, i);
            let d = free_motion_derivative(&sc.plant, &s, tr.tau_m[i], &sc.disturbance, tr.t[i]).unwrap();
            lumped_force_disturbance(&sc.plant, &s, d[1], d[3], &sc.disturbance, 0.0, tr.t[i])
        })
        .collect();
    // With the torque held over a sample, tau_m - Jm theta_ddot - bm theta_dot
    // averaged over the step is the step mean of the lumped disturbance.
    let scale = lumped.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let worst = (0..tr.len() - 1)
        .map(|i| {
            let recon = tr.tau_m[i]
                - jm * (tr.theta_dot[i + 1] - tr.theta_dot[i]) / dt
                - bm * 0.5 * (tr.theta_dot[i] + tr.theta_dot[i + 1]);
            (recon - 0.5 * (lumped[i] + lumped[i + 1])).abs()
        })
        .fold(0.0, f64::max);
    assert!(worst < 1e-4 * scale, "{worst} vs {scale}");
}

/// Relative RMS gap between the link acceleration error built from the
/// estimates and the central difference of the velocity error, after settling.
fn acceleration_error_mismatch(sc: &Scenario, reference: &Signal) -> f64 {
    let tr = run_scenario(sc).unwrap();
    let p = &sc.plant.nominal;
    let v = |a: [f64; 4]| Vector4::from_row_slice(&a);
    let errs: Vec<[f64; 4]> = (0..tr.len())
        .map(|i| {
            let s = state(&tr, i);
            let est = DisturbanceEstimates::from_vectors(
                p,
                &s.to_vector(),
                v(tr.tau_dis_hat[i]),
                v(tr.tau_dis_dot_hat[i]),
                v(tr.tau_dis_ddot_hat[i]),
            );
            position_errors(&s, &est, &reference.derivatives::<5>(tr.t[i]), p)
        })
        .collect();
    let dt = sc.sim.dt;
    let (mut num, mut den) = (0.0, 0.0);
    for i in tr.index_at(sc.settle)..tr.len() - 1 {
        let fd = (errs[i + 1][1] - errs[i - 1][1]) / (2.0 * dt);
        num += (errs[i][2] - fd).powi(2);
        den += fd * fd;
    }
    (num / den).sqrt()
}

#[test]
fn link_acceleration_error_matches_finite_difference() {
    // open loop under a 1 Hz link load: the acceleration error is large and
    // smooth, so the gap is the observer error alone
    let mut sc = Scenario::open_loop("accel", Signal::zero());
    sc.disturbance.link = Signal::from_waveform(Waveform::Sine { offset: 0.0, amplitude: 5e-3, freq_hz: 1.0, phase: 0.0 });
    sc.sim.duration = 3.0;
    sc.settle = 1.0;
    let reference = Signal::from_waveform(Waveform::Sine { offset: 0.0, amplitude: 0.1592, freq_hz: 1.0, phase: 0.0 });
    let open = acceleration_error_mismatch(&sc, &reference);
    assert!(open < 1e-3, "open loop {open}");

    // Closed loop the surface drives the estimated errors to zero, so the true
    // acceleration error shrinks to the size of the estimation error. Only the
    // continuous law is free of sample-rate switching that a central
    // difference cannot resolve.
    let sc = with_override(&bundled("fig5c").unwrap(), "sim.duration", "6").unwrap();
    let ControlMode::Position { reference, .. } = &sc.control else { panic!("position scenario") };
    let closed = acceleration_error_mismatch(&sc, reference);
    assert!(closed < 0.05, "continuous law {closed}");
}

#[test]
fn released_push_returns_spring_torque_to_zero() {
    let sc = bundled("fig6c").unwrap();
    let tr = run_scenario(&sc).unwrap();
    let env = sc.environment.as_ref().unwrap();
    let release = 2.0;
    let push = (0..tr.len()).map(|i| env.applied_torque.value(tr.t[i]).abs()).fold(0.0, f64::max);
    let after = (tr.index_at(release + 0.5)..tr.len()).map(|i| tr.tau_s[i].abs()).fold(0.0, f64::max);
    assert!(push > 0.0);
    assert!(after <= 0.05 * push, "{after} vs push {push}");
}

#[test]
fn continuous_law_has_no_sign_flip_chatter() {
    let cont = bundled("fig5c").unwrap();
    let disc = with_override(&cont, "control.law", "discontinuous").unwrap();
    let index = |sc: &Scenario| {
        let tr = run_scenario(sc).unwrap();
        let from = tr.index_at(sc.settle);
        chattering_index(&tr.tau_m[from..], sc.sim.dt)
    };
    // total variation of a sign flip every sample at the switching amplitude
    let baseline = 2.0 * 0.001 / cont.sim.dt;
    let (c, d) = (index(&cont), index(&disc));
    assert!(d > 0.9 * baseline, "the discontinuous run should chatter: {d} vs {baseline}");
    assert!(c < 0.1 * baseline, "{c} vs {baseline}");
}
