//! Switched model-reference admittance control for physical human-robot
//! interaction on a two-link planar arm.
//!
//! Layers, outermost first:
//!
//! - [`admittance_mrac`]: per-axis adaptive admittance channel following a
//!   [`switched_reference`] model, certified by a common Lyapunov matrix
//!   from [`cqlf`];
//! - [`tracking`]: Cartesian feedback-linearizing PD tracker;
//! - [`manipulator`]: rigid-body arm model;
//! - [`sim`]: the fixed-step loop tying them together, with runtime audits;
//! - [`config`] and [`export`]: scenario files, traces, metrics and figure data.

pub mod admittance_mrac;
pub mod config;
pub mod cqlf;
pub mod export;
pub mod integrate;
pub mod linalg;
pub mod manipulator;
pub mod sim;
pub mod switched_reference;
pub mod tracking;

pub use config::ScenarioConfig;
pub use sim::{run_scenario, RunMetrics, RunOutput, Session, SimAbort, SimError, SimTrace, Snapshot};
