//! The bundled three-node system: two synthetic base years, two stylised
//! extremes and two representative days per year.

use crate::error::Result;
use crate::model::{validate_system, SystemConfig, SystemModel};
use crate::scenario::{build_scenario_set, model_synthetic_traces, ScenarioSet};

pub const TOY3_CONFIG: &str = include_str!("../data/toy3/config.toml");

/// Seed used by the examples.
pub const TOY3_SEED: u64 = 42;

pub fn toy3_config() -> SystemConfig {
    SystemConfig::from_toml(TOY3_CONFIG).expect("bundled config parses")
}

pub fn toy3_model() -> SystemModel {
    validate_system(toy3_config()).expect("bundled config is valid")
}

pub fn toy3_scenarios(model: &SystemModel, seed: u64) -> Result<ScenarioSet> {
    build_scenario_set(model, &model_synthetic_traces(model)?, seed)
}
