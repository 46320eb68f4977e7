//! Builds the toy system's scenario set from synthetic weather years and
//! prints what each scenario holds.
//!
//! cargo run --example toy_scenarios

use resilience_market::scenario::{model_synthetic_traces, write_scenario_set};
use resilience_market::toy::{toy3_model, toy3_scenarios, TOY3_SEED};

fn main() -> resilience_market::Result<()> {
    let model = toy3_model();
    let traces = model_synthetic_traces(&model)?;
    println!("{} synthetic base years of {} days", traces.len(), traces[0].num_days());

    let set = toy3_scenarios(&model, TOY3_SEED)?;
    for s in &set.scenarios {
        let days: Vec<String> = s.days.iter().map(|d| format!("day {} x{}", d.source_day, d.weight)).collect();
        println!(
            "{:<14} {:?} p={:.4} peak {:.0} MW  [{}]",
            s.id,
            s.tag,
            s.probability,
            s.max_system_demand(),
            days.join(", ")
        );
    }

    let mut buf = Vec::new();
    write_scenario_set(&mut buf, &set)?;
    println!("scenarios.csv would hold {} rows", buf.iter().filter(|&&b| b == b'\n').count() - 1);
    Ok(())
}
