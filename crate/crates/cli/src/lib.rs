//! Scenario-driven front end: JSON configs in, CSV series and JSON
//! reports out.

pub mod config;
pub mod error;
pub mod output;
pub mod run;

pub use config::{parse_config, parse_config_str, Experiment, ScenarioConfig};
pub use error::CliError;
pub use run::{run_scenario, verify_scenario, RunSummary};
