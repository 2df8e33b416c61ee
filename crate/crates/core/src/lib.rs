//! Series elastic actuator (SEA) simulation with a second-order disturbance
//! observer and sliding mode position/force controllers.
//!
//! The crate is organised bottom-up:
//!
//! * [`plant`] : SEA free-motion and contact dynamics, disturbance channels.
//! * [`signal`] : scripted time signals used for disturbances and references.
//! * [`dob`] : second-order (auxiliary variable) and zero-order disturbance observers.
//! * [`smc`] : sliding mode position and force control laws.
//! * [`sim`] : fixed-step closed-loop executor producing a [`sim::Trace`].
//! * [`analysis`] : metrics and stability/robustness verifiers on traces.
//! * [`scenario`] : flat key-value scenario files and the bundled replays.
//! * [`sweep`] and [`verify`] : batch runs over parameters and the property checks.
//!
//! Batch work (sweeps, seeded repetitions, the property checks) runs on rayon
//! when the default `parallel` feature is enabled and sequentially otherwise.

pub mod analysis;
pub mod csv;
pub mod dob;
pub mod par;
pub mod plant;
pub mod scenario;
pub mod signal;
pub mod sim;
pub mod smc;
pub mod sweep;
pub mod verify;

pub use analysis::MetricsReport;
pub use plant::{EnvironmentModel, PlantParams, PlantState, SeaParams};
pub use scenario::{Scenario, ScenarioError};
pub use sim::{run_scenario, simulate, Outcome, SimConfig, SimError, Trace};
