#![allow(dead_code)]

use std::collections::BTreeMap;

use resilience_market::model::{validate_system, SystemConfig, SystemModel};
use resilience_market::scenario::{RepresentativeDay, Scenario, ScenarioSet, ScenarioTag};

pub fn model(toml: &str) -> SystemModel {
    validate_system(SystemConfig::from_toml(toml).expect("test config parses")).expect("test config is valid")
}

/// One day with the given per-node demand series, standing in for `weight`
/// days.
pub fn day(weight: u32, demand: &[(&str, Vec<f64>)]) -> RepresentativeDay {
    RepresentativeDay {
        weight,
        demand: demand.iter().map(|(n, v)| (n.to_string(), v.clone())).collect::<BTreeMap<_, _>>(),
        ..Default::default()
    }
}

pub fn scenario(id: &str, probability: f64, days: Vec<RepresentativeDay>) -> Scenario {
    let spd = days[0].demand.values().next().map_or(1, Vec::len);
    Scenario {
        id: id.into(),
        probability,
        tag: ScenarioTag::Base,
        steps_per_day: spd,
        days,
    }
}

pub fn single(s: Scenario) -> ScenarioSet {
    ScenarioSet { scenarios: vec![s] }
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}
