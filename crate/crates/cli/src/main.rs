use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand};
use sea_smc::scenario::{find_scenario, list_scenarios};
use sea_smc::sweep::{format_table, sweep_with, with_override};
use sea_smc::{csv, simulate, verify, MetricsReport, Scenario, SimError, Trace};

const EXIT_FAILURE: u8 = 1;
const EXIT_VALIDATION: u8 = 2;
const EXIT_DIVERGED: u8 = 3;

#[derive(Parser)]
#[command(name = "sea-smc", version, about = "SEA sliding mode control with a disturbance observer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write trace.csv, summary.txt and scenario.resolved.
    Run {
        /// Scenario file, or a name found on the search path or in the bundled set.
        scenario: String,
        #[command(flatten)]
        common: Common,
    },
    /// Run one simulation per value of a scenario key and write sweep.csv.
    Sweep {
        scenario: String,
        /// Dotted scenario key, e.g. control.epsilon.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Run every acceptance check and the negative controls.
    Verify,
    /// List scenarios on the search path and the bundled set.
    ListScenarios,
}

#[derive(Args)]
struct Common {
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Control and integration period (s).
    #[arg(long, allow_negative_numbers = true)]
    dt: Option<f64>,
    /// Simulated time (s).
    #[arg(long, allow_negative_numbers = true)]
    duration: Option<f64>,
    /// Directories searched for scenario names, `:`-separated.
    #[arg(long, env = "SEA_SMC_SCENARIO_PATH", hide_env_values = true)]
    scenario_path: Option<String>,
}

#[derive(Debug)]
enum Failure {
    Validation(String),
    Diverged(String),
    Other(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Validation(_) => EXIT_VALIDATION,
            Failure::Diverged(_) => EXIT_DIVERGED,
            Failure::Other(_) => EXIT_FAILURE,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Validation(m) | Failure::Diverged(m) | Failure::Other(m) => m,
        }
    }
}

fn io_err(path: &Path, e: io::Error) -> Failure {
    Failure::Other(format!("{}: {e}", path.display()))
}

fn load(arg: &str, common: &Common) -> Result<Scenario, Failure> {
    let (mut sc, _) =
        find_scenario(arg, common.scenario_path.as_deref()).map_err(|e| Failure::Validation(format!("{arg}: {e}")))?;
    let overrides = [
        ("sim.seed", common.seed.map(|s| s.to_string())),
        ("sim.dt", common.dt.map(|x| format!("{x:e}"))),
        ("sim.duration", common.duration.map(|x| format!("{x:e}"))),
    ];
    for (key, value) in overrides {
        if let Some(v) = value {
            sc = with_override(&sc, key, &v).map_err(|e| Failure::Validation(format!("--{}: {e}", &key[4..])))?;
        }
    }
    sc.validate().map_err(|e| Failure::Validation(format!("{arg}: {e}")))?;
    Ok(sc)
}

fn write_run(dir: &Path, sc: &Scenario, trace: &Trace) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let path = dir.join("trace.csv");
    let f = fs::File::create(&path).map_err(|e| io_err(&path, e))?;
    csv::write_trace(trace, BufWriter::new(f)).map_err(|e| io_err(&path, e))?;
    let path = dir.join("scenario.resolved");
    fs::write(&path, sc.to_text()).map_err(|e| io_err(&path, e))
}

fn run(arg: &str, common: &Common) -> Result<(), Failure> {
    let sc = load(arg, common)?;
    let out = simulate(&sc).map_err(|e| match e {
        SimError::Diverged { .. } => Failure::Diverged(e.to_string()),
        e => Failure::Validation(e.to_string()),
    })?;
    write_run(&common.out, &sc, &out.trace)?;
    let summary_path = common.out.join("summary.txt");
    let (summary, result) = match out.failure {
        Some(e) => {
            let text = format!("status = diverged\nreason = {e}\nsamples = {}\n", out.trace.len());
            (text, Err(Failure::Diverged(e.to_string())))
        }
        None => match MetricsReport::from_trace(&out.trace, sc.settle) {
            Ok(m) => (format!("status = ok\n{}", m.to_text()), Ok(())),
            Err(e) => return Err(Failure::Validation(format!("analysis: {e}"))),
        },
    };
    fs::write(&summary_path, &summary).map_err(|e| io_err(&summary_path, e))?;
    print!("{summary}");
    println!("wrote {}", common.out.display());
    result
}

fn dir_name(i: usize, value: &str) -> String {
    let clean: String = value.chars().map(|c| if c.is_ascii_alphanumeric() || "+-.".contains(c) { c } else { '_' }).collect();
    format!("run_{i:03}_{clean}")
}

fn sweep(arg: &str, param: &str, values: &[String], common: &Common) -> Result<(), Failure> {
    let base = load(arg, common)?;
    // Every point is validated before anything runs.
    for v in values {
        with_override(&base, param, v).map_err(|e| Failure::Validation(format!("{param} = {v}: {e}")))?;
    }
    fs::create_dir_all(&common.out).map_err(|e| io_err(&common.out, e))?;
    let write_errors = Mutex::new(Vec::new());
    let rows = sweep_with(&base, param, values, |i, sc, trace| {
        if let Err(e) = write_run(&common.out.join(dir_name(i, &values[i])), sc, trace) {
            write_errors.lock().expect("no poisoning").push(e);
        }
    })
    .map_err(|e| Failure::Validation(format!("{param}: {e}")))?;
    if let Some(e) = write_errors.into_inner().expect("no poisoning").into_iter().next() {
        return Err(e);
    }
    let table = format_table(&rows);
    let path = common.out.join("sweep.csv");
    fs::write(&path, &table).map_err(|e| io_err(&path, e))?;
    print!("{table}");
    let failed: Vec<&str> = rows.iter().filter(|r| !r.ok()).map(|r| r.value.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Diverged(format!("{} of {} points failed: {}", failed.len(), rows.len(), failed.join(", "))))
    }
}

fn verify_all() -> Result<(), Failure> {
    let results = verify::run_all();
    let controls = verify::negative_controls();
    let mut stdout = io::stdout().lock();
    for r in &results {
        let _ = writeln!(stdout, "{}", r.line());
    }
    for c in &controls {
        let _ = writeln!(stdout, "negative control {}: {} ({})", if c.caught { "CAUGHT" } else { "MISSED" }, c.name, c.detail);
    }
    let failed = results.iter().filter(|r| !r.pass).count();
    let missed = controls.iter().filter(|c| !c.caught).count();
    let _ = writeln!(
        stdout,
        "{} of {} criteria passed, {} of {} negative controls caught",
        results.len() - failed,
        results.len(),
        controls.len() - missed,
        controls.len()
    );
    if failed + missed == 0 {
        Ok(())
    } else {
        Err(Failure::Other(format!("{failed} criteria failed, {missed} negative controls missed")))
    }
}

fn list() -> Result<(), Failure> {
    let sp = std::env::var("SEA_SMC_SCENARIO_PATH").ok();
    let mut stdout = io::stdout().lock();
    for (name, source) in list_scenarios(sp.as_deref()) {
        let description = match find_scenario(if source == "bundled" { &name } else { &source }, None) {
            Ok((sc, _)) => sc.description,
            Err(e) => format!("invalid: {e}"),
        };
        if writeln!(stdout, "{name}\t{source}\t{description}").is_err() {
            break;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { scenario, common } => run(scenario, common),
        Command::Sweep { scenario, param, values, common } => sweep(scenario, param, values, common),
        Command::Verify => verify_all(),
        Command::ListScenarios => list(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
