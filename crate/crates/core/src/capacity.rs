//! Capacity-mechanism auction against an administrative demand curve, and
//! a two-solve estimator for capacity derates.

use crate::dispatch::solve_scenarios;
use crate::error::{Error, Result};
use crate::lp::LinearProgram;
use crate::model::{DesignKind, MarketDesign, SystemModel};
use crate::scenario::ScenarioSet;

#[derive(Debug, Clone, PartialEq)]
pub struct CapacityOutcome {
    /// MW cleared per resource, indexed like `model.resources`.
    pub cleared: Vec<f64>,
    /// MW of each demand segment left unprocured.
    pub shortage: Vec<f64>,
    pub segment_quantity: Vec<f64>,
    /// $/MW-year.
    pub segment_penalty: Vec<f64>,
    /// Clearing price, $/MW-year.
    pub price: f64,
    pub objective: f64,
}

/// One supply offer: annualised cost ($/MW-year) and derated MW.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CapacityOffer {
    pub cost: f64,
    pub quantity: f64,
}

/// Clears offers against demand segments `(MW, $/MW-year)`.
pub fn clear_capacity_auction(offers: &[CapacityOffer], segments: &[(f64, f64)]) -> Result<CapacityOutcome> {
    let mut lp = LinearProgram::minimise();
    let supply: Vec<_> = offers
        .iter()
        .enumerate()
        .map(|(r, o)| lp.add_var(format!("cleared_{r}"), 0.0, o.quantity, o.cost))
        .collect();
    let short: Vec<_> = segments
        .iter()
        .enumerate()
        .map(|(j, &(q, pen))| lp.add_var(format!("short_{j}"), 0.0, q, pen))
        .collect();
    let total: f64 = segments.iter().map(|s| s.0).sum();
    let coeffs = supply.iter().chain(&short).map(|&v| (v, 1.0)).collect();
    let balance = lp.add_eq("balance", total, coeffs);
    let sol = lp.solve()?;
    let get = |v| if sol.x.is_empty() { 0.0 } else { sol.value(v) };
    Ok(CapacityOutcome {
        cleared: supply.iter().map(|&v| get(v)).collect(),
        shortage: short.iter().map(|&v| get(v)).collect(),
        segment_quantity: segments.iter().map(|s| s.0).collect(),
        segment_penalty: segments.iter().map(|s| s.1).collect(),
        // with nothing to procure the balance dual is degenerate; report 0
        price: if sol.row_duals.is_empty() || total <= 0.0 { 0.0 } else { sol.dual(balance) },
        objective: sol.objective,
    })
}

/// Demand segments of the design: fractions of the largest system-coincident
/// half-hourly demand over all scenarios, priced at multiples of CONE.
pub fn capacity_segments(design: &MarketDesign, set: &ScenarioSet) -> Vec<(f64, f64)> {
    let peak = set.max_system_demand();
    design
        .cm_segments
        .iter()
        .map(|s| (s.fraction * peak, s.cone_multiple * design.cone))
        .collect()
}

/// Clears the capacity auction for the built fleet. Every built resource
/// offers its derated capacity at its investment cost.
pub fn clear_capacity_mechanism(model: &SystemModel, design: &MarketDesign, set: &ScenarioSet) -> Result<CapacityOutcome> {
    if design.kind != DesignKind::Cm {
        return Err(Error::validation("market_design", format!("capacity auction needs the cm design, got {}", design.kind.as_str())));
    }
    let mut offers = Vec::with_capacity(model.resources.len());
    for (i, r) in model.resources.iter().enumerate() {
        let quantity = if r.built {
            let derate = r.elcc_derate.ok_or_else(|| {
                Error::validation(format!("resources[{i}].elcc_derate"), "required for the capacity auction")
            })?;
            r.capacity * derate
        } else {
            0.0
        };
        offers.push(CapacityOffer {
            cost: r.invest_cost,
            quantity,
        });
    }
    clear_capacity_auction(&offers, &capacity_segments(design, set))
}

/// Approximate derate of resource `r`: the expected reduction in unserved
/// energy from building it, per MW of capacity and expected hour at risk
/// (hours with shedding when it is absent), clamped to `[0, 1]`. Both
/// dispatches use the energy-only design.
pub fn estimate_elcc_derate(model: &SystemModel, set: &ScenarioSet, r: usize) -> Result<f64> {
    let design = model.design(DesignKind::Eom);
    let mut mix = model.build_status();
    mix[r] = false;
    let without = solve_scenarios(&model.with_mix(&mix), set, &design)?;
    mix[r] = true;
    let with = solve_scenarios(&model.with_mix(&mix), set, &design)?;

    let mut use_without = 0.0;
    let mut use_with = 0.0;
    let mut hours = 0.0;
    for (a, b) in without.iter().zip(&with) {
        let p = a.probability;
        use_without += p * a.annual_shed();
        use_with += p * b.annual_shed();
        for k in 0..a.num_steps() {
            let shed: f64 = a.shed.iter().map(|s| s[k]).sum();
            if shed > 1e-6 {
                hours += p * a.step_weight(k);
            }
        }
    }
    let cap = model.resources[r].capacity;
    if hours <= 0.0 || cap <= 0.0 {
        return Ok(0.0);
    }
    Ok(((use_without - use_with) / (cap * hours)).clamp(0.0, 1.0))
}
