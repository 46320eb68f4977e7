//! Unserved-energy duration curves with and without insurance on the toy
//! system, read at the standard exceedance levels, plus the outage cost
//! comparison. Writes use_curves.svg to the working directory.
//!
//! cargo run --release --example duration_curves

use resilience_market::equilibrium::find_equilibrium;
use resilience_market::model::DesignKind;
use resilience_market::report::{
    curves_svg, label_residuals, outage_cost_comparison, poe_value, residual_duration_curve, use_duration_curve, Scope,
    POE_LEVELS,
};
use resilience_market::toy::{toy3_model, toy3_scenarios, TOY3_SEED};

fn main() -> resilience_market::Result<()> {
    let model = toy3_model();
    let set = toy3_scenarios(&model, TOY3_SEED)?;
    let eq = find_equilibrium(&model, &model.design(DesignKind::Eom), &set)?;
    let ins = eq.insurance.as_ref().expect("toy config has an insurance section");
    let residual = label_residuals(&eq.solutions, &ins.residual_shed);

    let without = use_duration_curve(&model, &eq.solutions, Scope::System);
    let with = residual_duration_curve(&model, &eq.solutions, &residual, Scope::System)?;
    for level in POE_LEVELS {
        println!(
            "POE{:.0}: {:.4}% USE uninsured, {:.4}% insured",
            level * 100.0,
            poe_value(&without, level),
            poe_value(&with, level)
        );
    }
    let premium: f64 = ins.premiums.iter().sum();
    for row in outage_cost_comparison(&model, &eq.solutions, &residual, premium)? {
        println!(
            "POE{:.0}: outage cost ${:.0} -> ${:.0}, saving ${:.0} against premium ${:.0}",
            row.poe_level * 100.0,
            row.without_insurance,
            row.with_insurance,
            row.reduction,
            row.premium
        );
    }
    std::fs::write("use_curves.svg", curves_svg("System USE", &[("uninsured", &without), ("insured", &with)]))?;
    println!("wrote use_curves.svg");
    Ok(())
}
