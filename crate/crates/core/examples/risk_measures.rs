//! Risk-weighted utility of a resource from a small profit distribution:
//! CVaR in closed form and as a linear program.
//!
//! cargo run --example risk_measures

use resilience_market::model::RiskParams;
use resilience_market::risk::{cvar_lp, discrete_cvar, risk_weighted_utility, ProfitVector};

fn main() -> resilience_market::Result<()> {
    let profits = ProfitVector {
        values: vec![12.0e6, 9.5e6, -4.0e6, -30.0e6],
        probabilities: vec![0.49, 0.49, 0.01, 0.01],
    };
    println!("mean ${:.0}", profits.mean());
    for alpha in [0.01, 0.02, 0.1, 0.5, 1.0] {
        println!(
            "alpha {alpha:<4}: cvar ${:>12.0} (lp ${:>12.0})",
            discrete_cvar(&profits.values, &profits.probabilities, alpha)?,
            cvar_lp(&profits.values, &profits.probabilities, alpha)?
        );
    }
    let invest = 5.0e6;
    for beta in [0.0, 0.5, 1.0] {
        let u = risk_weighted_utility(&profits, RiskParams { beta, alpha: 0.1 }, invest)?;
        println!("beta {beta:.1}: utility after ${invest:.0} capital cost ${u:.0}");
    }
    Ok(())
}
