//! Scenario-driven command-line front end for `qds-core`.

pub mod commands;
pub mod report;
pub mod scenario;

pub use commands::{run, Command, Outcome, Status};
pub use report::Report;
pub use scenario::{parse_scenario, parse_scenario_with, Overrides, Scenario, ScenarioError};
