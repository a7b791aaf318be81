//! Simulator for a chain of service tiers managed by a layered adaptation
//! stack: goal translation, a single MAPE-K supervisor, one PI controller per
//! tier, and online learners for load and interference.
//!
//! ```
//! use hiersim_core::{config::parse_config, engine::run_scenario};
//!
//! let cfg = parse_config(r#"{"duration": 60}"#).unwrap();
//! let out = run_scenario(&cfg).unwrap();
//! assert_eq!(out.trace.len(), 120);
//! ```

pub mod config;
pub mod control;
pub mod disturbance;
pub mod engine;
pub mod error;
pub mod mape;
pub mod ml;
pub mod plant;
pub mod trace;

pub use config::{parse_config, ScenarioConfig};
pub use engine::{run_scenario, run_scenario_with_probe, RunOutput, StepProbe};
pub use error::{Result, SimError};
