//! Solves the toy system's dispatch under the energy-only and reserve
//! demand curve designs and compares prices, shedding and solution quality.
//!
//! cargo run --example dispatch_prices

use resilience_market::dispatch::{build_economic_dispatch, solve_economic_dispatch, verify_dispatch_solution};
use resilience_market::model::DesignKind;
use resilience_market::toy::{toy3_model, toy3_scenarios, TOY3_SEED};

fn main() -> resilience_market::Result<()> {
    let model = toy3_model();
    let set = toy3_scenarios(&model, TOY3_SEED)?;
    for kind in [DesignKind::Eom, DesignKind::Ordc] {
        let design = model.design(kind);
        println!("== {}", kind.as_str());
        for s in &set.scenarios {
            let problem = build_economic_dispatch(&model, s, &design)?;
            let sol = solve_economic_dispatch(&problem)?;
            let check = verify_dispatch_solution(&model, s, &sol)?;
            let peak: Vec<String> = model
                .nodes
                .iter()
                .zip(&sol.energy_price)
                .map(|(n, p)| format!("{} {:.0}", n.id, p.iter().copied().fold(f64::MIN, f64::max)))
                .collect();
            let reserve_peak = sol.reserve_price.iter().copied().fold(0.0, f64::max);
            println!(
                "{:<14} {:>4} vars  cost ${:>13.0}  shed {:>8.1} MWh  peak price [{}]  reserve {:.0}  residual {:.1e}  gap {:.1e}",
                s.id,
                problem.lp.num_vars(),
                sol.objective,
                sol.annual_shed(),
                peak.join(", "),
                reserve_peak,
                check.max_primal(),
                check.relative_duality_gap
            );
        }
    }
    Ok(())
}
