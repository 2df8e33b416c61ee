//! Scenario files: flat `section.key = value` text.
//!
//! Lines starting with `#` are comments. Signals are sums of numbered
//! sources, e.g.
//!
//! ```text
//! reference.0.kind = sine
//! reference.0.amplitude = 0.1592
//! reference.0.freq_hz = 1
//! disturbance.link.0.kind = random
//! disturbance.link.0.rms = 0.003
//! disturbance.link.0.window.start = 10
//! ```
//!
//! Unknown keys are rejected so typos do not silently fall back to defaults.
//! [`Scenario::to_text`] writes a complete file that parses back to the same
//! scenario, which is what makes a run reproducible from its output folder.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dob::{DobError, ObserverGains};
use crate::plant::{ContactMode, DisturbanceProfile, EnvironmentModel, PlantParams, PlantState, SeaParams};
use crate::signal::{RandomSpec, Signal, Source, Waveform, Window};
use crate::sim::{ControlMode, Integrator, ObserverSpec, SimConfig};
use crate::smc::{position_alpha, Ablation, ForceControllerConfig, PositionControllerConfig, SwitchLaw};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: {key}: {message}")]
    Value { line: usize, key: String, message: String },
    #[error("line {line}: unknown key {key}")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: duplicate key {key}")]
    Duplicate { line: usize, key: String },
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
    #[error("scenario not found: {0}")]
    NotFound(String),
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
}

fn invalid(field: impl Into<String>, message: impl ToString) -> ScenarioError {
    ScenarioError::Invalid { field: field.into(), message: message.to_string() }
}

/// Everything needed to run and score one simulation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub description: String,
    pub plant: PlantParams,
    pub disturbance: DisturbanceProfile,
    pub environment: Option<EnvironmentModel>,
    pub control: ControlMode,
    pub observer: ObserverSpec,
    pub initial: PlantState,
    pub sim: SimConfig,
    /// Metrics are computed from this time on (s).
    pub settle: f64,
}

pub const DEFAULT_G_DOB: f64 = 500.0;
pub const DEFAULT_G_SMC: f64 = 100.0;
pub const DEFAULT_RHO_P: f64 = 0.001;
pub const DEFAULT_RHO_F: f64 = 0.0035;
pub const DEFAULT_C0_F: f64 = 100.0;

impl Scenario {
    fn base(name: &str, control: ControlMode) -> Self {
        Self {
            name: name.to_string(),
            description: String::new(),
            plant: PlantParams::standard(),
            disturbance: DisturbanceProfile::none(),
            environment: None,
            control,
            observer: ObserverSpec::from_bandwidth(DEFAULT_G_DOB).expect("positive bandwidth"),
            initial: PlantState::default(),
            sim: SimConfig::default(),
            settle: 0.0,
        }
    }

    /// Position tracking of a 0.1592 rad, 1 Hz sine with default gains.
    pub fn position_default(name: &str) -> Self {
        Self::base(
            name,
            ControlMode::Position {
                config: PositionControllerConfig::from_bandwidth(DEFAULT_G_SMC, DEFAULT_RHO_P),
                reference: Signal::from_waveform(Waveform::Sine { offset: 0.0, amplitude: 0.1592, freq_hz: 1.0, phase: 0.0 }),
            },
        )
    }

    pub fn force_default(name: &str) -> Self {
        Self::base(
            name,
            ControlMode::Force { config: ForceControllerConfig::new(DEFAULT_C0_F, DEFAULT_RHO_F), reference: Signal::zero() },
        )
    }

    pub fn open_loop(name: &str, torque: Signal) -> Self {
        Self::base(name, ControlMode::OpenLoop { torque })
    }

    pub fn position_config(&self) -> Option<&PositionControllerConfig> {
        match &self.control {
            ControlMode::Position { config, .. } => Some(config),
            _ => None,
        }
    }

    pub fn force_config(&self) -> Option<&ForceControllerConfig> {
        match &self.control {
            ControlMode::Force { config, .. } => Some(config),
            _ => None,
        }
    }

    pub fn position_config_mut(&mut self) -> Option<&mut PositionControllerConfig> {
        match &mut self.control {
            ControlMode::Position { config, .. } => Some(config),
            _ => None,
        }
    }

    pub fn force_config_mut(&mut self) -> Option<&mut ForceControllerConfig> {
        match &mut self.control {
            ControlMode::Force { config, .. } => Some(config),
            _ => None,
        }
    }

    pub fn reference_mut(&mut self) -> &mut Signal {
        match &mut self.control {
            ControlMode::Position { reference, .. } | ControlMode::Force { reference, .. } => reference,
            ControlMode::OpenLoop { torque } => torque,
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.plant.validate().map_err(|e| invalid("plant", e))?;
        if let Some(env) = &self.environment {
            env.validate().map_err(|e| invalid("environment", e))?;
        }
        let g = &self.observer.gains;
        ObserverGains::new(g.l1, g.l2, g.l3).map_err(|e| invalid("observer", e))?;
        if !(self.observer.zero_order_bandwidth.is_finite() && self.observer.zero_order_bandwidth > 0.0) {
            return Err(invalid(
                "observer.zero_order_bandwidth",
                DobError::NonPositiveBandwidth(self.observer.zero_order_bandwidth),
            ));
        }
        self.sim.validate().map_err(|e| invalid("sim", e))?;
        if !self.initial.is_finite() {
            return Err(invalid("initial", "state must be finite"));
        }
        if !(self.settle.is_finite() && self.settle >= 0.0 && self.settle < self.sim.duration) {
            return Err(invalid("analysis.settle", "must lie in [0, duration)"));
        }
        match &self.control {
            ControlMode::Position { config, reference } => {
                config.validate().map_err(|e| invalid("control", e))?;
                check_reference(reference, 4, self.sim.duration, self.sim.rng_seed)?;
            }
            ControlMode::Force { config, reference } => {
                config.validate().map_err(|e| invalid("control", e))?;
                check_reference(reference, 2, self.sim.duration, self.sim.rng_seed)?;
            }
            ControlMode::OpenLoop { .. } => {}
        }
        Ok(())
    }
}

/// Checks each analytic derivative against a central difference of the
/// previous one at a handful of times away from jumps.
pub fn check_reference(sig: &Signal, orders: u32, duration: f64, seed: u64) -> Result<(), ScenarioError> {
    let sig = sig.realize(seed);
    let breaks = sig.breakpoints();
    let h = 1e-6;
    for i in 1..=7 {
        let t = duration * f64::from(i) / 8.0 + 1e-3;
        if breaks.iter().any(|b| (b - t).abs() < 10.0 * h) {
            continue;
        }
        for k in 0..orders {
            let fd = (sig.derivative(t + h, k) - sig.derivative(t - h, k)) / (2.0 * h);
            let an = sig.derivative(t, k + 1);
            if !an.is_finite() {
                return Err(invalid("reference", format!("derivative {} is not finite at t = {t}", k + 1)));
            }
            let scale = an.abs().max(1e-6 * sig.derivative(t, k).abs()).max(1e-9);
            if (fd - an).abs() > 0.01 * scale {
                return Err(invalid("reference", format!("derivative {} inconsistent at t = {t}", k + 1)));
            }
        }
    }
    Ok(())
}

struct Entry {
    value: String,
    line: usize,
    used: bool,
}

struct Doc {
    entries: BTreeMap<String, Entry>,
}

impl Doc {
    fn parse(text: &str) -> Result<Self, ScenarioError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let s = raw.trim();
            if s.is_empty() || s.starts_with('#') {
                continue;
            }
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| ScenarioError::Syntax { line, message: format!("expected `key = value`, got `{s}`") })?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() || !k.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.') {
                return Err(ScenarioError::Syntax { line, message: format!("bad key `{k}`") });
            }
            if entries.contains_key(k) {
                return Err(ScenarioError::Duplicate { line, key: k.to_string() });
            }
            entries.insert(k.to_string(), Entry { value: v.to_string(), line, used: false });
        }
        Ok(Self { entries })
    }

    fn raw(&mut self, key: &str) -> Option<(String, usize)> {
        self.entries.get_mut(key).map(|e| {
            e.used = true;
            (e.value.clone(), e.line)
        })
    }

    fn line_of(&self, key: &str) -> usize {
        self.entries.get(key).map_or(0, |e| e.line)
    }

    fn string(&mut self, key: &str) -> Option<String> {
        self.raw(key).map(|(v, _)| v)
    }

    fn f64(&mut self, key: &str) -> Result<Option<f64>, ScenarioError> {
        match self.raw(key) {
            None => Ok(None),
            Some((v, line)) => v.parse::<f64>().ok().filter(|x| x.is_finite()).map(Some).ok_or_else(|| ScenarioError::Value {
                line,
                key: key.into(),
                message: format!("expected a finite number, got `{v}`"),
            }),
        }
    }

    fn f64_or(&mut self, key: &str, default: f64) -> Result<f64, ScenarioError> {
        Ok(self.f64(key)?.unwrap_or(default))
    }

    fn u64(&mut self, key: &str) -> Result<Option<u64>, ScenarioError> {
        match self.raw(key) {
            None => Ok(None),
            Some((v, line)) => v.parse::<u64>().map(Some).map_err(|_| ScenarioError::Value {
                line,
                key: key.into(),
                message: format!("expected a nonnegative integer, got `{v}`"),
            }),
        }
    }

    fn bool(&mut self, key: &str) -> Result<Option<bool>, ScenarioError> {
        match self.raw(key) {
            None => Ok(None),
            Some((v, line)) => match v.as_str() {
                "true" | "yes" | "on" | "1" => Ok(Some(true)),
                "false" | "no" | "off" | "0" => Ok(Some(false)),
                _ => Err(ScenarioError::Value { line, key: key.into(), message: format!("expected true/false, got `{v}`") }),
            },
        }
    }

    fn choice<T: Copy>(&mut self, key: &str, options: &[(&str, T)]) -> Result<Option<T>, ScenarioError> {
        match self.raw(key) {
            None => Ok(None),
            Some((v, line)) => options.iter().find(|(n, _)| *n == v).map(|(_, t)| Some(*t)).ok_or_else(|| {
                let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
                ScenarioError::Value { line, key: key.into(), message: format!("expected one of {}, got `{v}`", names.join("|")) }
            }),
        }
    }

    fn has_prefix(&self, prefix: &str) -> bool {
        self.entries.keys().any(|k| k.starts_with(prefix))
    }

    fn indices(&self, prefix: &str) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .entries
            .keys()
            .filter_map(|k| k.strip_prefix(prefix)?.strip_prefix('.')?.split('.').next()?.parse().ok())
            .collect();
        out.dedup();
        out
    }

    fn signal(&mut self, prefix: &str, stream_base: u64) -> Result<Signal, ScenarioError> {
        let mut sig = Signal::zero();
        for i in self.indices(prefix) {
            let p = format!("{prefix}.{i}");
            let kind_key = format!("{p}.kind");
            let line = self.line_of(&kind_key);
            let kind = self.string(&kind_key).ok_or_else(|| invalid(kind_key.clone(), "missing source kind"))?;
            let waveform = match kind.as_str() {
                "zero" => Waveform::Zero,
                "constant" => Waveform::Constant(self.f64_or(&format!("{p}.value"), 0.0)?),
                "step" => Waveform::Step {
                    amplitude: self.f64_or(&format!("{p}.amplitude"), 0.0)?,
                    at: self.f64_or(&format!("{p}.at"), 0.0)?,
                },
                "sine" => Waveform::Sine {
                    offset: self.f64_or(&format!("{p}.offset"), 0.0)?,
                    amplitude: self.f64_or(&format!("{p}.amplitude"), 0.0)?,
                    freq_hz: self.f64_or(&format!("{p}.freq_hz"), 1.0)?,
                    phase: self.f64_or(&format!("{p}.phase"), 0.0)?,
                },
                "random" => {
                    let count = self.u64(&format!("{p}.count"))?.unwrap_or(8) as usize;
                    let stream = self.u64(&format!("{p}.stream"))?.unwrap_or(stream_base + i as u64);
                    let spec = RandomSpec {
                        rms: self.f64_or(&format!("{p}.rms"), 0.0)?,
                        f_min: self.f64_or(&format!("{p}.f_min"), 0.0)?,
                        f_max: self.f64_or(&format!("{p}.f_max"), 5.0)?,
                        count,
                        stream,
                    };
                    if spec.f_min < 0.0 || spec.f_max < spec.f_min || count == 0 {
                        return Err(ScenarioError::Value {
                            line,
                            key: kind_key,
                            message: "random source needs 0 <= f_min <= f_max and count > 0".into(),
                        });
                    }
                    Waveform::Random(spec)
                }
                other => {
                    return Err(ScenarioError::Value {
                        line,
                        key: kind_key,
                        message: format!("unknown source kind `{other}` (zero|constant|step|sine|random)"),
                    })
                }
            };
            let window = if self.has_prefix(&format!("{p}.window.")) {
                let w = Window {
                    start: self.f64_or(&format!("{p}.window.start"), 0.0)?,
                    end: self.f64_or(&format!("{p}.window.end"), f64::MAX)?,
                    ramp: self.f64_or(&format!("{p}.window.ramp"), 0.0)?,
                };
                if w.end < w.start || w.ramp < 0.0 {
                    return Err(invalid(format!("{p}.window"), "need start <= end and ramp >= 0"));
                }
                Some(w)
            } else {
                None
            };
            sig.sources.push(Source { waveform, window });
        }
        Ok(sig)
    }

    fn finish(&self) -> Result<(), ScenarioError> {
        match self.entries.iter().filter(|(_, e)| !e.used).min_by_key(|(_, e)| e.line) {
            Some((k, e)) => Err(ScenarioError::UnknownKey { line: e.line, key: k.clone() }),
            None => Ok(()),
        }
    }
}

fn sea_params(doc: &mut Doc, prefix: &str, base: SeaParams) -> Result<SeaParams, ScenarioError> {
    Ok(SeaParams {
        motor_inertia: doc.f64_or(&format!("{prefix}.motor_inertia"), base.motor_inertia)?,
        link_inertia: doc.f64_or(&format!("{prefix}.link_inertia"), base.link_inertia)?,
        motor_damping: doc.f64_or(&format!("{prefix}.motor_damping"), base.motor_damping)?,
        link_damping: doc.f64_or(&format!("{prefix}.link_damping"), base.link_damping)?,
        stiffness: doc.f64_or(&format!("{prefix}.stiffness"), base.stiffness)?,
    })
}

const LAWS: &[(&str, u8)] = &[("discontinuous", 0), ("quasi", 1), ("continuous", 2)];
const ABLATIONS: &[(&str, Ablation)] = &[
    ("none", Ablation::None),
    ("flip_switch_sign", Ablation::FlipSwitchSign),
    ("drop_matched_estimate", Ablation::DropMatchedEstimate),
];

fn switch_law(doc: &mut Doc) -> Result<SwitchLaw, ScenarioError> {
    let line = doc.line_of("control.law");
    Ok(match doc.choice("control.law", LAWS)?.unwrap_or(0) {
        1 => SwitchLaw::Quasi {
            epsilon: doc.f64("control.epsilon")?.ok_or_else(|| ScenarioError::Value {
                line,
                key: "control.law".into(),
                message: "quasi law needs control.epsilon".into(),
            })?,
        },
        2 => SwitchLaw::Continuous,
        _ => SwitchLaw::Discontinuous,
    })
}

/// Switching gain from either `control.rho` (sigma-rate units) or
/// `control.rho_torque` (amplitude of the switching torque, N m).
fn rho(doc: &mut Doc, default: f64, torque_to_rate: f64) -> Result<f64, ScenarioError> {
    let line = doc.line_of("control.rho_torque");
    match (doc.f64("control.rho")?, doc.f64("control.rho_torque")?) {
        (Some(_), Some(_)) => Err(ScenarioError::Value {
            line,
            key: "control.rho_torque".into(),
            message: "give either control.rho or control.rho_torque".into(),
        }),
        (Some(r), None) => Ok(r),
        (None, Some(t)) => Ok(t * torque_to_rate),
        (None, None) => Ok(default),
    }
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let mut doc = Doc::parse(text)?;
        let name = doc.string("name").unwrap_or_else(|| "unnamed".into());
        let mode = doc.choice("control.mode", &[("position", 0u8), ("force", 1), ("open_loop", 2)])?.unwrap_or(0);
        let mut sc = match mode {
            1 => Self::force_default(&name),
            2 => Self::open_loop(&name, Signal::zero()),
            _ => Self::position_default(&name),
        };
        sc.description = doc.string("description").unwrap_or_default();

        let nominal = sea_params(&mut doc, "plant.nominal", SeaParams::standard())?;
        let actual = sea_params(&mut doc, "plant.actual", nominal)?;
        sc.plant = PlantParams { nominal, actual };

        sc.disturbance = DisturbanceProfile {
            gravity_moment: doc.f64_or("disturbance.gravity_moment", 0.0)?,
            motor: doc.signal("disturbance.motor", 100)?,
            link: doc.signal("disturbance.link", 200)?,
        };

        if doc.bool("environment.enabled")?.unwrap_or(false) {
            sc.environment = Some(EnvironmentModel {
                inertia: doc.f64_or("environment.inertia", 0.0)?,
                damping: doc.f64_or("environment.damping", 0.0)?,
                stiffness: doc.f64_or("environment.stiffness", 0.0)?,
                rest_angle: doc.signal("environment.rest_angle", 300)?,
                applied_torque: doc.signal("environment.applied_torque", 400)?,
                contact_mode: doc
                    .choice(
                        "environment.contact_mode",
                        &[("always", ContactMode::AlwaysEngaged), ("unilateral", ContactMode::Unilateral)],
                    )?
                    .unwrap_or_default(),
            });
        } else if doc.has_prefix("environment.") {
            let key = doc.entries.keys().find(|k| k.starts_with("environment.")).cloned().unwrap_or_default();
            return Err(ScenarioError::Value {
                line: doc.line_of(&key),
                key,
                message: "environment keys need environment.enabled = true".into(),
            });
        }

        let g_dob = doc.f64_or("observer.g_dob", DEFAULT_G_DOB)?;
        let mut gains = ObserverGains::tune(g_dob).map_err(|e| invalid("observer.g_dob", e))?;
        let (l1, l2, l3) = (doc.f64("observer.l1")?, doc.f64("observer.l2")?, doc.f64("observer.l3")?);
        if l1.is_some() || l2.is_some() || l3.is_some() {
            gains = ObserverGains::new(l1.unwrap_or(gains.l1), l2.unwrap_or(gains.l2), l3.unwrap_or(gains.l3))
                .map_err(|e| invalid("observer", e))?;
        }
        sc.observer = ObserverSpec { gains, zero_order_bandwidth: doc.f64_or("observer.zero_order_bandwidth", g_dob)? };

        let law = switch_law(&mut doc)?;
        let mu = doc.f64_or("control.mu", 1.0)?;
        let use_estimates = doc.bool("control.use_estimates")?.unwrap_or(true);
        let ablation = doc.choice("control.ablation", ABLATIONS)?.unwrap_or_default();
        let reference = doc.signal("reference", 0)?;
        match &mut sc.control {
            ControlMode::Position { config, reference: r } => {
                let g = doc.f64_or("control.g_smc", DEFAULT_G_SMC)?;
                let mut c = PositionControllerConfig::from_bandwidth(g, 1.0);
                for (i, k) in ["c0", "c1", "c2"].iter().enumerate() {
                    c.c[i] = doc.f64_or(&format!("control.{k}"), c.c[i])?;
                }
                for i in 0..4 {
                    c.continuous[i] = doc.f64_or(&format!("control.continuous.c{i}"), c.continuous[i])?;
                }
                c.rho = rho(&mut doc, DEFAULT_RHO_P, position_alpha(&nominal))?;
                c.law = law;
                c.mu = mu;
                c.use_estimates = use_estimates;
                c.ablation = ablation;
                *config = c;
                if !reference.sources.is_empty() {
                    *r = reference;
                }
            }
            ControlMode::Force { config, reference: r } => {
                let c0 = doc.f64_or("control.c0", DEFAULT_C0_F)?;
                let mut c = ForceControllerConfig::new(c0, 1.0);
                for i in 0..2 {
                    c.continuous[i] = doc.f64_or(&format!("control.continuous.c{i}"), c.continuous[i])?;
                }
                c.rho = rho(&mut doc, DEFAULT_RHO_F, 1.0 / nominal.motor_inertia)?;
                c.law = law;
                c.mu = mu;
                c.use_estimates = use_estimates;
                c.use_link_accel = doc.bool("control.use_link_accel")?.unwrap_or(true);
                c.ablation = ablation;
                *config = c;
                *r = reference;
            }
            ControlMode::OpenLoop { torque } => *torque = reference,
        }

        sc.initial = PlantState::new(
            doc.f64_or("initial.q", 0.0)?,
            doc.f64_or("initial.q_dot", 0.0)?,
            doc.f64_or("initial.theta", 0.0)?,
            doc.f64_or("initial.theta_dot", 0.0)?,
        );

        let d = SimConfig::default();
        sc.sim = SimConfig {
            dt: doc.f64_or("sim.dt", d.dt)?,
            duration: doc.f64_or("sim.duration", d.duration)?,
            integrator: doc
                .choice("sim.integrator", &[("euler", Integrator::Euler), ("rk4", Integrator::Rk4)])?
                .unwrap_or_default(),
            motor_encoder_ppr: ppr(&mut doc, "sim.motor_encoder_ppr", d.motor_encoder_ppr)?,
            link_encoder_ppr: ppr(&mut doc, "sim.link_encoder_ppr", d.link_encoder_ppr)?,
            quantization: doc.bool("sim.quantization")?.unwrap_or(d.quantization),
            deriv_filter_bw: doc.f64_or("sim.deriv_filter_bw", d.deriv_filter_bw)?,
            rng_seed: doc.u64("sim.seed")?.unwrap_or(d.rng_seed),
            torque_limit: doc.f64("sim.torque_limit")?,
            divergence_limit: doc.f64_or("sim.divergence_limit", d.divergence_limit)?,
        };
        sc.settle = doc.f64_or("analysis.settle", 0.0)?;

        doc.finish()?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ScenarioError::Io { path: path.display().to_string(), message: e.to_string() })?;
        Self::parse(&text)
    }

    /// Complete scenario text; parses back to an identical scenario.
    pub fn to_text(&self) -> String {
        let mut o = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(o, "{k} = {v}");
        };
        kv("name", self.name.clone());
        if !self.description.is_empty() {
            kv("description", self.description.replace('\n', " "));
        }
        for (prefix, p) in [("plant.nominal", &self.plant.nominal), ("plant.actual", &self.plant.actual)] {
            kv(&format!("{prefix}.motor_inertia"), num(p.motor_inertia));
            kv(&format!("{prefix}.link_inertia"), num(p.link_inertia));
            kv(&format!("{prefix}.motor_damping"), num(p.motor_damping));
            kv(&format!("{prefix}.link_damping"), num(p.link_damping));
            kv(&format!("{prefix}.stiffness"), num(p.stiffness));
        }
        kv("disturbance.gravity_moment", num(self.disturbance.gravity_moment));
        let mut lines = Vec::new();
        signal_lines("disturbance.motor", &self.disturbance.motor, &mut lines);
        signal_lines("disturbance.link", &self.disturbance.link, &mut lines);
        if let Some(env) = &self.environment {
            lines.push(("environment.enabled".into(), "true".into()));
            lines.push(("environment.inertia".into(), num(env.inertia)));
            lines.push(("environment.damping".into(), num(env.damping)));
            lines.push(("environment.stiffness".into(), num(env.stiffness)));
            let mode = match env.contact_mode {
                ContactMode::AlwaysEngaged => "always",
                ContactMode::Unilateral => "unilateral",
            };
            lines.push(("environment.contact_mode".into(), mode.into()));
            signal_lines("environment.rest_angle", &env.rest_angle, &mut lines);
            signal_lines("environment.applied_torque", &env.applied_torque, &mut lines);
        }
        let g = &self.observer.gains;
        match g.bandwidth {
            Some(b) => lines.push(("observer.g_dob".into(), num(b))),
            None => {
                lines.push(("observer.l1".into(), num(g.l1)));
                lines.push(("observer.l2".into(), num(g.l2)));
                lines.push(("observer.l3".into(), num(g.l3)));
            }
        }
        lines.push(("observer.zero_order_bandwidth".into(), num(self.observer.zero_order_bandwidth)));

        let law_lines = |law: SwitchLaw, lines: &mut Vec<(String, String)>| match law {
            SwitchLaw::Discontinuous => lines.push(("control.law".into(), "discontinuous".into())),
            SwitchLaw::Quasi { epsilon } => {
                lines.push(("control.law".into(), "quasi".into()));
                lines.push(("control.epsilon".into(), num(epsilon)));
            }
            SwitchLaw::Continuous => lines.push(("control.law".into(), "continuous".into())),
        };
        let ablation_name = |a: Ablation| ABLATIONS.iter().find(|(_, x)| *x == a).map(|(n, _)| n.to_string()).unwrap_or_default();
        match &self.control {
            ControlMode::Position { config: c, reference } => {
                lines.push(("control.mode".into(), "position".into()));
                law_lines(c.law, &mut lines);
                for (i, k) in ["c0", "c1", "c2"].iter().enumerate() {
                    lines.push((format!("control.{k}"), num(c.c[i])));
                }
                for i in 0..4 {
                    lines.push((format!("control.continuous.c{i}"), num(c.continuous[i])));
                }
                lines.push(("control.rho".into(), num(c.rho)));
                lines.push(("control.mu".into(), num(c.mu)));
                lines.push(("control.use_estimates".into(), c.use_estimates.to_string()));
                lines.push(("control.ablation".into(), ablation_name(c.ablation)));
                signal_lines("reference", reference, &mut lines);
            }
            ControlMode::Force { config: c, reference } => {
                lines.push(("control.mode".into(), "force".into()));
                law_lines(c.law, &mut lines);
                lines.push(("control.c0".into(), num(c.c0)));
                for i in 0..2 {
                    lines.push((format!("control.continuous.c{i}"), num(c.continuous[i])));
                }
                lines.push(("control.rho".into(), num(c.rho)));
                lines.push(("control.mu".into(), num(c.mu)));
                lines.push(("control.use_estimates".into(), c.use_estimates.to_string()));
                lines.push(("control.use_link_accel".into(), c.use_link_accel.to_string()));
                lines.push(("control.ablation".into(), ablation_name(c.ablation)));
                signal_lines("reference", reference, &mut lines);
            }
            ControlMode::OpenLoop { torque } => {
                lines.push(("control.mode".into(), "open_loop".into()));
                signal_lines("reference", torque, &mut lines);
            }
        }
        let s = &self.sim;
        let i = &self.initial;
        lines.extend([
            ("initial.q".into(), num(i.q)),
            ("initial.q_dot".into(), num(i.q_dot)),
            ("initial.theta".into(), num(i.theta)),
            ("initial.theta_dot".into(), num(i.theta_dot)),
            ("sim.dt".into(), num(s.dt)),
            ("sim.duration".into(), num(s.duration)),
            ("sim.integrator".into(), if s.integrator == Integrator::Euler { "euler" } else { "rk4" }.into()),
            ("sim.motor_encoder_ppr".into(), s.motor_encoder_ppr.to_string()),
            ("sim.link_encoder_ppr".into(), s.link_encoder_ppr.to_string()),
            ("sim.quantization".into(), s.quantization.to_string()),
            ("sim.deriv_filter_bw".into(), num(s.deriv_filter_bw)),
            ("sim.seed".into(), s.rng_seed.to_string()),
            ("sim.divergence_limit".into(), num(s.divergence_limit)),
            ("analysis.settle".into(), num(self.settle)),
        ]);
        if let Some(l) = s.torque_limit {
            lines.push(("sim.torque_limit".into(), num(l)));
        }
        for (k, v) in lines {
            kv(&k, v);
        }
        o
    }
}

fn ppr(doc: &mut Doc, key: &str, default: u32) -> Result<u32, ScenarioError> {
    let line = doc.line_of(key);
    match doc.u64(key)? {
        None => Ok(default),
        Some(v) => u32::try_from(v).ok().filter(|v| *v > 0).ok_or_else(|| ScenarioError::Value {
            line,
            key: key.into(),
            message: "must be a positive 32-bit integer".into(),
        }),
    }
}

/// Shortest representation that parses back to the same `f64`.
fn num(x: f64) -> String {
    format!("{x:?}")
}

fn signal_lines(prefix: &str, sig: &Signal, out: &mut Vec<(String, String)>) {
    for (i, s) in sig.sources.iter().enumerate() {
        let p = format!("{prefix}.{i}");
        let mut push = |k: &str, v: String| out.push((format!("{p}.{k}"), v));
        match &s.waveform {
            Waveform::Zero => push("kind", "zero".into()),
            Waveform::Constant(c) => {
                push("kind", "constant".into());
                push("value", num(*c));
            }
            Waveform::Step { amplitude, at } => {
                push("kind", "step".into());
                push("amplitude", num(*amplitude));
                push("at", num(*at));
            }
            Waveform::Sine { offset, amplitude, freq_hz, phase } => {
                push("kind", "sine".into());
                push("offset", num(*offset));
                push("amplitude", num(*amplitude));
                push("freq_hz", num(*freq_hz));
                push("phase", num(*phase));
            }
            Waveform::Random(r) => {
                push("kind", "random".into());
                push("rms", num(r.rms));
                push("f_min", num(r.f_min));
                push("f_max", num(r.f_max));
                push("count", r.count.to_string());
                push("stream", r.stream.to_string());
            }
            // realized noise has no textual form; scenarios keep the parameters
            Waveform::BandLimited(_) => push("kind", "zero".into()),
        }
        if let Some(w) = &s.window {
            push("window.start", num(w.start));
            push("window.end", num(w.end));
            push("window.ramp", num(w.ramp));
        }
    }
}

/// Scenario files shipped with the crate, one per replayed experiment.
pub const BUNDLED: &[(&str, &str)] = &[
    ("fig4a", include_str!("../scenarios/fig4a.scenario")),
    ("fig4b", include_str!("../scenarios/fig4b.scenario")),
    ("fig4c", include_str!("../scenarios/fig4c.scenario")),
    ("fig5a", include_str!("../scenarios/fig5a.scenario")),
    ("fig5b", include_str!("../scenarios/fig5b.scenario")),
    ("fig5c", include_str!("../scenarios/fig5c.scenario")),
    ("fig6a", include_str!("../scenarios/fig6a.scenario")),
    ("fig6b", include_str!("../scenarios/fig6b.scenario")),
    ("fig6c", include_str!("../scenarios/fig6c.scenario")),
];

pub fn bundled(name: &str) -> Result<Scenario, ScenarioError> {
    let name = name.strip_suffix(".scenario").unwrap_or(name);
    BUNDLED
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| ScenarioError::NotFound(name.to_string()))
        .and_then(|(_, text)| Scenario::parse(text))
}

/// Resolves a scenario argument: an existing file path, then `name` or
/// `name.scenario` inside each directory of `search_path` (`:`-separated),
/// then the bundled set.
pub fn find_scenario(arg: &str, search_path: Option<&str>) -> Result<(Scenario, Option<PathBuf>), ScenarioError> {
    let direct = Path::new(arg);
    if direct.is_file() {
        return Scenario::load(direct).map(|s| (s, Some(direct.to_path_buf())));
    }
    if let Some(sp) = search_path {
        for dir in std::env::split_paths(sp) {
            for candidate in [dir.join(arg), dir.join(format!("{arg}.scenario"))] {
                if candidate.is_file() {
                    return Scenario::load(&candidate).map(|s| (s, Some(candidate)));
                }
            }
        }
    }
    bundled(arg).map(|s| (s, None))
}

/// Names visible through the search path followed by the bundled names.
pub fn list_scenarios(search_path: Option<&str>) -> Vec<(String, String)> {
    let mut out = Vec::new();
    if let Some(sp) = search_path {
        for dir in std::env::split_paths(sp) {
            let Ok(rd) = std::fs::read_dir(&dir) else { continue };
            let mut files: Vec<PathBuf> =
                rd.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.extension().is_some_and(|x| x == "scenario")).collect();
            files.sort();
            for f in files {
                let name = f.file_stem().unwrap_or_default().to_string_lossy().into_owned();
                out.push((name, f.display().to_string()));
            }
        }
    }
    for (n, _) in BUNDLED {
        out.push((n.to_string(), "bundled".into()));
    }
    out
}
