//! Subsidy mode on the toy system: how much subsidised RDER consumers build
//! as the insurer's share of capital cost rises, capped by what the insurer
//! finds viable.
//!
//! cargo run --release --example subsidy_sweep

use resilience_market::equilibrium::find_market_equilibrium;
use resilience_market::insurance::{required_breakeven_premium, subsidy_equilibrium, PREMIUM_CAP};
use resilience_market::model::{validate_system, DesignKind};
use resilience_market::toy::{toy3_model, toy3_scenarios, TOY3_SEED};

fn main() -> resilience_market::Result<()> {
    let model = toy3_model();
    let set = toy3_scenarios(&model, TOY3_SEED)?;
    let eq = find_market_equilibrium(&model, &model.design(DesignKind::Eom), &set)?;
    let ins = model.insurance.clone().expect("toy config has an insurance section");
    let premium = required_breakeven_premium(&model, &set, &eq.solutions, &ins, 1.0, PREMIUM_CAP)?.premium_total;

    let kappas = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];
    for beta in [0.0, 0.5, 1.0] {
        let mut cfg = model.to_config();
        for c in &mut cfg.consumers {
            c.beta = beta;
        }
        let m = validate_system(cfg)?;
        println!("consumer risk weight {beta:.1}");
        for p in subsidy_equilibrium(&m, &set, &eq.solutions, &kappas, premium)? {
            println!(
                "   kappa {:.1}: insurer-viable {:>6.1} MW, demanded {:>6.1} MW, built {:>6.1} MW, storage {:.1} h",
                p.kappa, p.total_insurer, p.total_demand, p.total_realised, p.average_duration
            );
        }
    }
    Ok(())
}
