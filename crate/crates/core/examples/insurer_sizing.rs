//! Sizes the insurer's resilient distributed resources on the toy system's
//! energy-only equilibrium: break-even premium, portfolio and its
//! sensitivity to the insurer's risk weight and the compensation rate.
//!
//! cargo run --release --example insurer_sizing

use resilience_market::equilibrium::find_market_equilibrium;
use resilience_market::insurance::{required_breakeven_premium, PREMIUM_CAP};
use resilience_market::model::{validate_system, DesignKind};
use resilience_market::toy::{toy3_model, toy3_scenarios, TOY3_SEED};

fn main() -> resilience_market::Result<()> {
    let model = toy3_model();
    let set = toy3_scenarios(&model, TOY3_SEED)?;
    let eq = find_market_equilibrium(&model, &model.design(DesignKind::Eom), &set)?;
    let ins = model.insurance.clone().expect("toy config has an insurance section");

    let be = required_breakeven_premium(&model, &set, &eq.solutions, &ins, ins.kappa(), PREMIUM_CAP)?;
    println!("break-even premium ${:.0} after {} solves", be.premium_total, be.iterations);
    for (c, p) in model.consumers.iter().zip(&be.premiums) {
        println!("   {:<11} pays ${p:>12.0}", c.id);
    }
    for (o, mw) in ins.catalog.iter().zip(&be.insurer.capacity) {
        println!("   {:<15} {mw:>7.1} MW", o.id);
    }
    println!("   capital reserve ${:.0}, cvar ${:.2}", be.insurer.capital_reserve, be.insurer.cvar);

    println!("risk weight sweep");
    for beta in [0.0, 0.3, 0.5, 1.0] {
        let mut i = ins.clone();
        i.beta = beta;
        let b = required_breakeven_premium(&model, &set, &eq.solutions, &i, i.kappa(), PREMIUM_CAP)?;
        println!("   beta {beta:.1}: {:>7.1} MW at premium ${:.0}", b.insurer.capacity.iter().sum::<f64>(), b.premium_total);
    }

    println!("compensation sweep");
    for comp in [1000.0, 2000.0, 5000.0, 10000.0, 15000.0] {
        let mut cfg = model.to_config();
        for c in &mut cfg.consumers {
            c.compensation_rate = comp;
        }
        let m = validate_system(cfg)?;
        let b = required_breakeven_premium(&m, &set, &eq.solutions, &ins, ins.kappa(), PREMIUM_CAP)?;
        println!("   ${comp:>6.0}/MWh: {:>7.1} MW", b.insurer.capacity.iter().sum::<f64>());
    }
    Ok(())
}
