//! One-parameter sweeps. A parameter is addressed by its scenario-file key and
//! each value is applied to the resolved text of the base scenario, so every
//! point is exactly what `run` would do with that line edited.

use std::fmt::Write as _;

use crate::analysis::MetricsReport;
use crate::scenario::{Scenario, ScenarioError};
use crate::sim::{simulate, Trace};

/// Keys that are derived from `key` and would otherwise override it.
fn derived_keys(key: &str) -> &'static [&'static str] {
    match key {
        "observer.g_dob" => &["observer.l1", "observer.l2", "observer.l3", "observer.zero_order_bandwidth"],
        "control.g_smc" => &[
            "control.c0",
            "control.c1",
            "control.c2",
            "control.continuous.c0",
            "control.continuous.c1",
            "control.continuous.c2",
            "control.continuous.c3",
        ],
        "control.rho_torque" => &["control.rho"],
        "control.rho" => &["control.rho_torque"],
        _ => &[],
    }
}

/// The base scenario with `key = value` applied.
pub fn with_override(base: &Scenario, key: &str, value: &str) -> Result<Scenario, ScenarioError> {
    let drop = derived_keys(key);
    let mut out = String::new();
    let mut replaced = false;
    for line in base.to_text().lines() {
        let k = line.split_once('=').map(|(k, _)| k.trim()).unwrap_or("");
        if drop.contains(&k) {
            continue;
        }
        if k == key {
            let _ = writeln!(out, "{key} = {value}");
            replaced = true;
        } else {
            out.push_str(line);
            out.push('\n');
        }
    }
    if !replaced {
        let _ = writeln!(out, "{key} = {value}");
    }
    Scenario::parse(&out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub value: String,
    pub metrics: Option<MetricsReport>,
    /// Validation failure or divergence of this point; the sweep goes on.
    pub error: Option<String>,
}

impl SweepRow {
    pub fn ok(&self) -> bool {
        self.error.is_none()
    }
}

/// Runs one simulation per value. A key the scenario format does not know is
/// an error for the whole sweep; anything else is recorded per row.
pub fn sweep(base: &Scenario, key: &str, values: &[String]) -> Result<Vec<SweepRow>, ScenarioError> {
    sweep_with(base, key, values, |_, _, _| {})
}

/// Like [`sweep`], calling `on_run(index, scenario, trace)` for every point that
/// produced a trace (including the samples before a divergence).
pub fn sweep_with<F>(base: &Scenario, key: &str, values: &[String], on_run: F) -> Result<Vec<SweepRow>, ScenarioError>
where
    F: Fn(usize, &Scenario, &Trace) + Sync + Send,
{
    let mut points = Vec::with_capacity(values.len());
    for (i, v) in values.iter().enumerate() {
        match with_override(base, key, v) {
            Err(e @ ScenarioError::UnknownKey { .. }) => return Err(e),
            r => points.push((i, v.clone(), r)),
        }
    }
    Ok(crate::par::map(&points, |(i, value, sc)| {
        let sc = match sc {
            Ok(sc) => sc,
            Err(e) => return SweepRow { value: value.clone(), metrics: None, error: Some(e.to_string()) },
        };
        match simulate(sc) {
            Err(e) => SweepRow { value: value.clone(), metrics: None, error: Some(e.to_string()) },
            Ok(out) => {
                on_run(*i, sc, &out.trace);
                match out.failure {
                    Some(e) => SweepRow { value: value.clone(), metrics: None, error: Some(e.to_string()) },
                    None => match MetricsReport::from_trace(&out.trace, sc.settle) {
                        Ok(m) => SweepRow { value: value.clone(), metrics: Some(m), error: None },
                        Err(e) => SweepRow { value: value.clone(), metrics: None, error: Some(e.to_string()) },
                    },
                }
            }
        }
    }))
}

pub const TABLE_HEADER: &str = "value,status,rmse_tracking,chattering_index,reaching_time,reaching_pass,lyapunov_violations,\
max_estimation_error_d2,max_estimation_error_d4,delta_beta_measured";

/// Comparison table, one CSV line per value. Failed points keep their row
/// with the reason in `status` and empty metric fields.
pub fn format_table(rows: &[SweepRow]) -> String {
    let mut o = String::new();
    let _ = writeln!(o, "{TABLE_HEADER}");
    for r in rows {
        match (&r.metrics, &r.error) {
            (Some(m), None) => {
                let reach = m.reaching_time.map_or("none".to_string(), |t| format!("{t:.9e}"));
                let _ = writeln!(
                    o,
                    "{},ok,{:.9e},{:.9e},{},{},{},{:.9e},{:.9e},{:.9e}",
                    r.value,
                    m.rmse_tracking,
                    m.chattering_index,
                    reach,
                    m.reaching_pass,
                    m.lyapunov_violations,
                    m.max_estimation_error[0],
                    m.max_estimation_error[1],
                    m.delta_beta_measured
                );
            }
            (_, e) => {
                let msg = e.as_deref().unwrap_or("failed").replace(',', ";");
                let _ = writeln!(o, "{},{},,,,,,,,", r.value, msg);
            }
        }
    }
    o
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::bundled;
    use crate::sim::run_scenario;

    fn short(name: &str, duration: f64) -> Scenario {
        let mut sc = bundled(name).unwrap();
        sc.sim.duration = duration;
        sc.settle = sc.settle.min(duration / 2.0);
        sc
    }

    #[test]
    fn override_replaces_and_drops_derived_keys() {
        let sc = short("fig4b", 1.0);
        let g = with_override(&sc, "observer.g_dob", "200").unwrap();
        assert_eq!(g.observer.gains.bandwidth, Some(200.0));
        assert_eq!(g.observer.zero_order_bandwidth, 200.0);
        let r = with_override(&sc, "control.rho_torque", "0.002").unwrap();
        let rho = r.position_config().unwrap().rho;
        assert!((rho - 2.0 * sc.position_config().unwrap().rho).abs() < 1e-6 * rho);
        let same = with_override(&sc, "sim.seed", &sc.sim.rng_seed.to_string()).unwrap();
        assert_eq!(same, sc);
        assert!(matches!(with_override(&sc, "control.nope", "1"), Err(ScenarioError::UnknownKey { .. })));
    }

    #[test]
    fn unknown_key_rejects_the_sweep() {
        let sc = short("fig4b", 0.1);
        assert!(sweep(&sc, "control.bogus", &["1".into()]).is_err());
    }

    #[test]
    fn single_value_sweep_matches_run() {
        let sc = short("fig5a", 2.0);
        let rows = sweep(&sc, "control.epsilon", &["0.1".into()]).unwrap();
        let direct = MetricsReport::from_trace(&run_scenario(&sc).unwrap(), sc.settle).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].metrics.as_ref(), Some(&direct));
    }

    #[test]
    fn failures_are_recorded_and_the_sweep_continues() {
        let sc = short("fig4b", 0.5);
        let vals: Vec<String> = ["-5", "500", "1e-9"].iter().map(|s| s.to_string()).collect();
        let rows = sweep(&sc, "observer.g_dob", &vals).unwrap();
        assert_eq!(rows.len(), 3);
        assert!(!rows[0].ok());
        assert!(rows[1].ok());
        let table = format_table(&rows);
        assert_eq!(table.lines().count(), 4);
        assert!(table.lines().nth(2).unwrap().starts_with("500,ok,"));
    }

    #[test]
    fn diverging_point_is_recorded() {
        let mut sc = short("fig4b", 0.5);
        sc.sim.divergence_limit = 1e-3;
        let rows = sweep(&sc, "sim.seed", &["1".into(), "2".into()]).unwrap();
        assert!(rows.iter().all(|r| r.error.as_deref().is_some_and(|e| e.contains("diverged"))));
    }
}
