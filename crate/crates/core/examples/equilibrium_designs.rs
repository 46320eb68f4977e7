//! Runs the retirement and investment loop on the toy system under each
//! market design and checks the result for profitable deviations.
//!
//! cargo run --release --example equilibrium_designs

use resilience_market::equilibrium::{check_no_unilateral_deviation, find_market_equilibrium};
use resilience_market::model::DesignKind;
use resilience_market::toy::{toy3_model, toy3_scenarios, TOY3_SEED};

fn main() -> resilience_market::Result<()> {
    let model = toy3_model();
    let set = toy3_scenarios(&model, TOY3_SEED)?;
    for kind in DesignKind::ALL {
        let design = model.design(kind);
        let res = find_market_equilibrium(&model, &design, &set)?;
        println!(
            "== {}: {} iterations, {} mixes evaluated, expected dispatch cost ${:.0}",
            kind.as_str(),
            res.iterations,
            res.evaluations,
            res.expected_dispatch_cost()
        );
        for e in &res.log {
            println!("   iter {} {:<10} {} {} (utility ${:.0})", e.iteration, e.phase.as_str(), e.action.as_str(), e.resource, e.utility);
        }
        for (r, res_r) in model.resources.iter().enumerate() {
            if res.build_status[r] {
                println!("   {:<10} utility ${:>14.0}", res_r.id, res.utilities[r]);
            }
        }
        let devs = check_no_unilateral_deviation(&model, &design, &set, &res.build_status)?;
        println!("   profitable deviations: {}", devs.len());
    }
    Ok(())
}
