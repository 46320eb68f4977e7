//! Clears the capacity mechanism for the toy system's current fleet and
//! compares configured derates with marginal ELCC estimates.
//!
//! cargo run --example capacity_auction

use resilience_market::capacity::{capacity_segments, clear_capacity_mechanism, estimate_elcc_derate};
use resilience_market::model::DesignKind;
use resilience_market::toy::{toy3_model, toy3_scenarios, TOY3_SEED};

fn main() -> resilience_market::Result<()> {
    let model = toy3_model();
    let set = toy3_scenarios(&model, TOY3_SEED)?;
    let design = model.design(DesignKind::Cm);

    for (q, p) in capacity_segments(&design, &set) {
        println!("demand segment {q:>7.1} MW at ${p:>8.0}/MW-yr");
    }
    let outcome = clear_capacity_mechanism(&model, &design, &set)?;
    println!("clearing price ${:.0}/MW-yr", outcome.price);
    for (r, res) in model.resources.iter().enumerate() {
        if !res.built {
            continue;
        }
        println!(
            "{:<10} cleared {:>6.1} MW  derate {}  elcc estimate {:.2}",
            res.id,
            outcome.cleared[r],
            res.elcc_derate.map_or("-".into(), |d| format!("{d:.2}")),
            estimate_elcc_derate(&model, &set, r)?
        );
    }
    for (i, s) in outcome.shortage.iter().enumerate() {
        if *s > 0.0 {
            println!("segment {i} short by {s:.1} MW");
        }
    }
    Ok(())
}
