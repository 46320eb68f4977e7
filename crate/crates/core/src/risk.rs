//! Discrete conditional value-at-risk, scenario profits and risk-weighted
//! investment utility.

use crate::capacity::CapacityOutcome;
use crate::dispatch::DispatchSolution;
use crate::error::{Error, Result};
use crate::lp::LinearProgram;
use crate::model::{ResourceKind, RiskParams, SystemModel};
use crate::scenario::ScenarioSet;

/// Per-scenario annual profit of one resource.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfitVector {
    pub values: Vec<f64>,
    pub probabilities: Vec<f64>,
}

impl ProfitVector {
    pub fn mean(&self) -> f64 {
        expectation(&self.values, &self.probabilities)
    }

    pub fn cvar(&self, alpha: f64) -> Result<f64> {
        discrete_cvar(&self.values, &self.probabilities, alpha)
    }
}

pub fn expectation(values: &[f64], probs: &[f64]) -> f64 {
    values.iter().zip(probs).map(|(v, p)| v * p).sum()
}

fn check_inputs(values: &[f64], probs: &[f64], alpha: f64) -> Result<()> {
    if values.is_empty() {
        return Err(Error::validation("cvar", "no scenario values"));
    }
    if values.len() != probs.len() {
        return Err(Error::validation(
            "cvar",
            format!("{} values but {} probabilities", values.len(), probs.len()),
        ));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::validation("cvar.alpha", format!("{alpha} is outside (0, 1]")));
    }
    Ok(())
}

/// `max_V  V - (1/alpha) * sum_w p_w * max(V - x_w, 0)`.
///
/// The objective is concave and piecewise linear with kinks at the scenario
/// values, so the maximum sits at one of them.
pub fn discrete_cvar(values: &[f64], probs: &[f64], alpha: f64) -> Result<f64> {
    check_inputs(values, probs, alpha)?;
    let objective = |v: f64| -> f64 {
        let tail: f64 = values.iter().zip(probs).map(|(x, p)| p * (v - x).max(0.0)).sum();
        v - tail / alpha
    };
    Ok(values.iter().map(|&v| objective(v)).fold(f64::NEG_INFINITY, f64::max))
}

/// The same quantity as the linear program with auxiliary tail variables.
pub fn cvar_lp(values: &[f64], probs: &[f64], alpha: f64) -> Result<f64> {
    check_inputs(values, probs, alpha)?;
    let mut lp = LinearProgram::maximise();
    let v = lp.add_var("var", f64::NEG_INFINITY, f64::INFINITY, 1.0);
    for (w, (&x, &p)) in values.iter().zip(probs).enumerate() {
        let tail = lp.add_var(format!("tail_{w}"), 0.0, f64::INFINITY, -p / alpha);
        lp.add_le(format!("tail_{w}"), x, vec![(v, 1.0), (tail, -1.0)]);
    }
    Ok(lp.solve()?.objective)
}

/// Annual profit of resource `r` in every scenario: energy and reserve
/// margins at the resource's nodal and system prices, scaled to the year by
/// the representative-day weights, plus capacity revenue when a capacity
/// auction cleared.
pub fn scenario_profits(
    model: &SystemModel,
    set: &ScenarioSet,
    r: usize,
    solutions: &[DispatchSolution],
    capacity: Option<&CapacityOutcome>,
) -> Result<ProfitVector> {
    let res = &model.resources[r];
    let node = model.resource_node(r);
    let cm_revenue = capacity.map_or(0.0, |c| c.price * c.cleared[r]);
    let mut values = Vec::with_capacity(set.len());
    for s in &set.scenarios {
        let sol = solutions
            .iter()
            .find(|x| x.scenario_id == s.id)
            .ok_or_else(|| Error::validation(format!("solutions.{}", s.id), "missing scenario solution"))?;
        let spd = sol.steps_per_day;
        let mut margin = 0.0;
        for k in 0..sol.num_steps() {
            let (d, t) = (k / spd, k % spd);
            let vc = s.days[d].variable_cost.get(&res.id).map_or(res.variable_cost, |v| v[t]);
            let energy = (sol.energy_price[node][k] - vc) * sol.generation[r][k];
            let reserve = (sol.reserve_price[k] - res.reserve_cost) * sol.reserve[r][k];
            margin += sol.step_weight(k) * (energy + reserve);
        }
        values.push(margin + cm_revenue);
    }
    Ok(ProfitVector {
        values,
        probabilities: set.probabilities(),
    })
}

/// `beta * CVaR + (1 - beta) * mean - invest_cost_total`.
pub fn risk_weighted_utility(profits: &ProfitVector, risk: RiskParams, invest_cost_total: f64) -> Result<f64> {
    let cvar = profits.cvar(risk.alpha)?;
    Ok(risk.beta * cvar + (1.0 - risk.beta) * profits.mean() - invest_cost_total)
}

/// Utility of resource `r` if it is built, with annual capital cost
/// `invest_cost * capacity`.
pub fn resource_utility(
    model: &SystemModel,
    set: &ScenarioSet,
    r: usize,
    solutions: &[DispatchSolution],
    capacity: Option<&CapacityOutcome>,
) -> Result<f64> {
    let res = &model.resources[r];
    debug_assert!(!matches!(res.kind, ResourceKind::RderSolar | ResourceKind::RderStorage));
    let profits = scenario_profits(model, set, r, solutions, capacity)?;
    risk_weighted_utility(&profits, model.risk, res.invest_cost * res.capacity)
}
