//! Deterministic scenario simulator: scripted agents, a seeded scheduler and
//! the bundled scenarios.

pub mod bundled;
pub mod rules;
pub mod run;
pub mod scenario;

pub use bundled::{bundled, bundled_scenarios};
pub use run::{run, RunError, RunOutput};
pub use scenario::{Expected, Scenario, ScenarioError, Step};
