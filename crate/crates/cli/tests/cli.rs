use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sea_smc::csv::{read_table, COLUMNS};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_sea-smc"));
    c.env_remove("SEA_SMC_SCENARIO_PATH");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn summary_value(dir: &Path, key: &str) -> String {
    let text = fs::read_to_string(dir.join("summary.txt")).unwrap();
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key} = ")).map(str::to_string))
        .unwrap_or_else(|| panic!("{key} in {text}"))
}

#[test]
fn run_bundled_fig4b_writes_trace_and_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("fig4b");
    let o = run(&["run", "fig4b", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rmse: f64 = summary_value(&out, "rmse_tracking").parse().unwrap();
    assert!(rmse < 0.01, "rmse {rmse}");
    assert_eq!(summary_value(&out, "status"), "ok");

    let text = fs::read_to_string(out.join("trace.csv")).unwrap();
    assert_eq!(text.lines().next().unwrap(), COLUMNS.join(","));
    let (_, rows) = read_table(&text).unwrap();
    assert_eq!(rows.len(), 40_001);
    for field in text.lines().nth(1).unwrap().split(',') {
        let mantissa = field.trim_start_matches('-').split('e').next().unwrap();
        assert_eq!(mantissa.chars().filter(char::is_ascii_digit).count(), 9, "{field}");
    }

    // The resolved scenario reproduces the run byte for byte.
    let again = tmp.path().join("again");
    let o = run(&["run", out.join("scenario.resolved").to_str().unwrap(), "--out", again.to_str().unwrap()]);
    assert!(o.status.success());
    assert_eq!(fs::read(out.join("trace.csv")).unwrap(), fs::read(again.join("trace.csv")).unwrap());
}

#[test]
fn malformed_file_exits_2_with_line_and_field() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.scenario");
    fs::write(&path, "name = bad\n\nsim.dt = fast\n").unwrap();
    let o = run(&["run", path.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 3") && err.contains("sim.dt"), "{err}");
}

#[test]
fn negative_l3_exits_2_before_simulating() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("l3.scenario");
    fs::write(&path, "name = l3\nobserver.l1 = 1500\nobserver.l2 = 750000\nobserver.l3 = -1\n").unwrap();
    let out = tmp.path().join("o");
    let o = run(&["run", path.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Hurwitz"));
    assert!(!out.exists(), "nothing may be written before validation passes");
}

#[test]
fn bad_override_flag_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["run", "fig4b", "--dt", "-1", "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("dt"));
    assert_eq!(run(&["run", "no-such-scenario"]).status.code(), Some(2));
}

#[test]
fn divergence_exits_3_and_keeps_the_partial_trace() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("div.scenario");
    let base = fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/scenarios/fig4b.scenario")).unwrap();
    fs::write(&path, format!("{base}sim.divergence_limit = 0.05\n")).unwrap();
    let out = tmp.path().join("o");
    let o = run(&["run", path.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(summary_value(&out, "status"), "diverged");
    let (_, rows) = read_table(&fs::read_to_string(out.join("trace.csv")).unwrap()).unwrap();
    assert!(!rows.is_empty() && rows.len() < 40_001, "{}", rows.len());
}

#[test]
fn overrides_reach_the_resolved_scenario() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let o = run(&["run", "fig4b", "--seed", "7", "--dt", "0.001", "--duration", "1", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let resolved = fs::read_to_string(out.join("scenario.resolved")).unwrap();
    for line in ["sim.seed = 7", "sim.dt = 0.001", "sim.duration = 1.0"] {
        assert!(resolved.lines().any(|l| l == line), "{line} in\n{resolved}");
    }
    let (_, rows) = read_table(&fs::read_to_string(out.join("trace.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 1001);
}

fn sweep_table(dir: &Path) -> Vec<Vec<String>> {
    let text = fs::read_to_string(dir.join("sweep.csv")).unwrap();
    text.lines().skip(1).map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn sweep_epsilon_writes_per_run_directories() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("s");
    let o = run(&[
        "sweep",
        "fig5b",
        "--param",
        "control.epsilon",
        "--values",
        "1e-3,1e-2,1e-1",
        "--duration",
        "3",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = sweep_table(&out);
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r[1] == "ok"));
    for (i, v) in ["1e-3", "1e-2", "1e-1"].iter().enumerate() {
        let dir = out.join(format!("run_{i:03}_{v}"));
        assert!(dir.join("trace.csv").is_file() && dir.join("scenario.resolved").is_file(), "{}", dir.display());
    }
}

#[test]
fn single_value_sweep_matches_run() {
    let tmp = tempfile::tempdir().unwrap();
    let (s, r) = (tmp.path().join("s"), tmp.path().join("r"));
    let o =
        run(&["sweep", "fig4b", "--param", "control.g_smc", "--values", "100", "--duration", "2", "--out", s.to_str().unwrap()]);
    assert!(o.status.success());
    let o = run(&["run", "fig4b", "--duration", "2", "--out", r.to_str().unwrap()]);
    assert!(o.status.success());
    let row = &sweep_table(&s)[0];
    let rmse: f64 = row[2].parse().unwrap();
    let run_rmse: f64 = summary_value(&r, "rmse_tracking").parse().unwrap();
    assert_eq!(rmse, run_rmse);
    assert_eq!(fs::read(s.join("run_000_100/trace.csv")).unwrap(), fs::read(r.join("trace.csv")).unwrap());
}

#[test]
fn sweep_records_divergence_and_continues() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("s");
    let o = run(&[
        "sweep",
        "fig4b",
        "--param",
        "sim.divergence_limit",
        "--values",
        "0.05,1e6",
        "--duration",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3));
    let rows = sweep_table(&out);
    assert!(rows[0][1].contains("diverged"), "{:?}", rows[0]);
    assert_eq!(rows[1][1], "ok");
}

#[test]
fn sweep_rejects_unknown_key_and_invalid_values_before_running() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("s");
    let o = run(&["sweep", "fig4b", "--param", "control.nope", "--values", "1", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["sweep", "fig4b", "--param", "observer.l3", "--values", "1e8,-1", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn search_path_scenarios_are_listed_and_runnable() {
    let tmp = tempfile::tempdir().unwrap();
    let base = fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/scenarios/fig4b.scenario")).unwrap();
    fs::write(
        tmp.path().join("mine.scenario"),
        base.replace("name = fig4b", "name = mine").replace("sim.duration = 20", "sim.duration = 1"),
    )
    .unwrap();
    let o = bin().arg("list-scenarios").env("SEA_SMC_SCENARIO_PATH", tmp.path()).output().unwrap();
    let listing = String::from_utf8(o.stdout).unwrap();
    assert!(listing.lines().next().unwrap().starts_with("mine\t"), "{listing}");
    for name in ["fig4a", "fig4b", "fig4c", "fig5a", "fig5b", "fig5c", "fig6a", "fig6b", "fig6c"] {
        assert!(listing.lines().any(|l| l.starts_with(&format!("{name}\tbundled"))), "{name}");
    }
    let out = tmp.path().join("o");
    let o =
        bin().args(["run", "mine", "--out", out.to_str().unwrap()]).env("SEA_SMC_SCENARIO_PATH", tmp.path()).output().unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(fs::read_to_string(out.join("scenario.resolved")).unwrap().contains("name = mine"));
}
