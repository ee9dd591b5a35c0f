//! Scenario configs, built-in presets, and the run/compare entry points
//! used by the command-line tool.

pub mod presets;
pub mod run;
pub mod scenario;

pub use presets::{preset, PRESET_NAMES};
pub use run::{
    compare, constants_report, execute, run, run_batch, Comparison, RunError, RunOutcome, RunReport, OUT_DIR_ENV,
};
pub use scenario::{load_scenario, Algorithm, Scenario, ScenarioConfig, ScenarioError};
