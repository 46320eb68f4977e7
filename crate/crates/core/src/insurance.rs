//! Insurance overlay: the insurer's RDER sizing problem, consumer RDER
//! problems, the break-even premium and the subsidy interaction.
//!
//! Both agents face the same operational model. For every scenario,
//! representative day and node with wholesale shedding, each RDER option at
//! that node is dispatched against the shed trace: solar output is bounded by
//! its availability, storage by its power rating and energy capacity, and
//! whatever shedding the RDER does not offset is the residual outage.
//! Storage cycles within the day and may charge from the grid in steps where
//! the node is not shedding.

use std::io::Write;

use rayon::prelude::*;

use crate::dispatch::DispatchSolution;
use crate::error::{Error, Result};
use crate::lp::{LinearProgram, VarId};
use crate::model::{Consumer, InsuranceConfig, InsuranceMode, ResourceKind, RderOption, RiskParams, SystemModel, STEP_HOURS};
use crate::risk::{discrete_cvar, expectation};
use crate::scenario::ScenarioSet;

const SHED_EPS: f64 = 1e-9;

/// Outage exposure at one node: shed MW and the $/MWh loss rate per
/// scenario and step.
#[derive(Debug, Clone)]
struct Exposure {
    node: usize,
    shed: Vec<Vec<f64>>,
    rate: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
struct SizedOption<'a> {
    option: &'a RderOption,
    node: usize,
    /// $/MW-year charged to the agent.
    unit_cost: f64,
    /// Fixes the capacity instead of optimising it.
    fixed: Option<f64>,
}

struct AgentProblem<'a> {
    exposures: Vec<Exposure>,
    options: Vec<SizedOption<'a>>,
    /// Scenario-independent income (premiums received, or minus premium
    /// paid).
    constant: f64,
    risk: RiskParams,
    /// Cost of capital reserved against a negative CVaR; `None` for agents
    /// that hold no reserve.
    capital_cost: Option<f64>,
}

#[derive(Debug, Clone)]
struct AgentSolution {
    capacity: Vec<f64>,
    /// [exposure][scenario][step].
    residual: Vec<Vec<Vec<f64>>>,
    /// Net output per option, [option][scenario][step].
    output: Vec<Vec<Vec<f64>>>,
    soc: Vec<Vec<Vec<f64>>>,
    profits: Vec<f64>,
    cvar: f64,
    cvar_lp: f64,
    phi: f64,
    utility: f64,
}

/// (option, scenario, step, net output terms, state of charge)
type OutputVars = (usize, usize, usize, Vec<(VarId, f64)>, Option<VarId>);

fn solve_agent(set: &ScenarioSet, sols: &[DispatchSolution], p: &AgentProblem<'_>) -> Result<AgentSolution> {
    let probs = set.probabilities();
    let beta = p.risk.beta;
    let alpha = p.risk.alpha;
    let mut lp = LinearProgram::maximise();

    let cap: Vec<VarId> = p
        .options
        .iter()
        .map(|o| {
            let (lo, hi) = o.fixed.map_or((0.0, f64::INFINITY), |c| (c, c));
            lp.add_var(format!("cap_{}", o.option.id), lo, hi, -(1.0 - beta) * o.unit_cost)
        })
        .collect();
    let var = lp.add_var("var", f64::NEG_INFINITY, f64::INFINITY, beta);
    let phi = p.capital_cost.map(|g| lp.add_var("phi", 0.0, f64::INFINITY, -g));

    // per scenario: linear part of the profit
    let mut profit_terms: Vec<Vec<(VarId, f64)>> = vec![Vec::new(); sols.len()];
    // (exposure, scenario, step) -> residual var
    let mut residual_vars: Vec<(usize, usize, usize, VarId)> = Vec::new();
    // (option, scenario, step) -> (output terms, soc var)
    let mut output_vars: Vec<OutputVars> = Vec::new();

    for (w, sol) in sols.iter().enumerate() {
        let spd = sol.steps_per_day;
        let scenario = &set.scenarios[w];
        for (day, rep) in scenario.days.iter().enumerate() {
            for (e, ex) in p.exposures.iter().enumerate() {
                let steps = day * spd..(day + 1) * spd;
                if ex.shed[w][steps.clone()].iter().all(|&x| x <= SHED_EPS) {
                    continue;
                }
                let at_node: Vec<usize> = (0..p.options.len()).filter(|&o| p.options[o].node == ex.node).collect();
                // balance terms per step
                let mut offset: Vec<Vec<(VarId, f64)>> = vec![Vec::new(); spd];
                for &o in &at_node {
                    let opt = p.options[o].option;
                    match opt.kind {
                        ResourceKind::RderSolar => {
                            let avail = rep.availability.get(&opt.id).ok_or_else(|| {
                                Error::validation(format!("scenarios.{}", scenario.id), format!("missing availability for `{}`", opt.id))
                            })?;
                            for t in 0..spd {
                                let k = day * spd + t;
                                if ex.shed[w][k] <= SHED_EPS {
                                    continue;
                                }
                                let g = lp.add_var(format!("solar_{}_{w}_{k}", opt.id), 0.0, f64::INFINITY, 0.0);
                                lp.add_le(format!("solarcap_{}_{w}_{k}", opt.id), 0.0, vec![(g, 1.0), (cap[o], -avail[t])]);
                                offset[t].push((g, 1.0));
                                output_vars.push((o, w, k, vec![(g, 1.0)], None));
                            }
                        }
                        ResourceKind::RderStorage => {
                            let start = lp.add_var(format!("soc_{}_{w}_{day}_start", opt.id), 0.0, f64::INFINITY, 0.0);
                            let mut prev = start;
                            for t in 0..spd {
                                let k = day * spd + t;
                                let c = lp.add_var(format!("chg_{}_{w}_{k}", opt.id), 0.0, f64::INFINITY, 0.0);
                                let d = lp.add_var(format!("dis_{}_{w}_{k}", opt.id), 0.0, f64::INFINITY, 0.0);
                                let s = lp.add_var(format!("soc_{}_{w}_{k}", opt.id), 0.0, f64::INFINITY, 0.0);
                                lp.add_le(format!("chgcap_{}_{w}_{k}", opt.id), 0.0, vec![(c, 1.0), (cap[o], -1.0)]);
                                lp.add_le(format!("discap_{}_{w}_{k}", opt.id), 0.0, vec![(d, 1.0), (cap[o], -1.0)]);
                                lp.add_le(format!("soccap_{}_{w}_{k}", opt.id), 0.0, vec![(s, 1.0), (cap[o], -opt.duration)]);
                                lp.add_eq(
                                    format!("soc_{}_{w}_{k}", opt.id),
                                    0.0,
                                    vec![
                                        (s, 1.0),
                                        (prev, -1.0),
                                        (c, -STEP_HOURS * opt.charge_efficiency),
                                        (d, STEP_HOURS / opt.discharge_efficiency),
                                    ],
                                );
                                if ex.shed[w][k] > SHED_EPS {
                                    offset[t].push((d, 1.0));
                                    offset[t].push((c, -1.0));
                                }
                                output_vars.push((o, w, k, vec![(d, 1.0), (c, -1.0)], Some(s)));
                                prev = s;
                            }
                            lp.add_eq(format!("cyclic_{}_{w}_{day}", opt.id), 0.0, vec![(start, 1.0), (prev, -1.0)]);
                        }
                        _ => unreachable!("catalog holds RDER kinds only"),
                    }
                }
                for t in 0..spd {
                    let k = day * spd + t;
                    let shed = ex.shed[w][k];
                    if shed <= SHED_EPS {
                        continue;
                    }
                    let weight = sol.step_weight(k);
                    let loss = weight * ex.rate[w][k];
                    let pc = lp.add_var(format!("residual_{e}_{w}_{k}"), 0.0, f64::INFINITY, -(1.0 - beta) * probs[w] * loss);
                    let mut coeffs = vec![(pc, 1.0)];
                    coeffs.extend(offset[t].iter().copied());
                    lp.add_eq(format!("outage_{e}_{w}_{k}"), shed, coeffs);
                    profit_terms[w].push((pc, -loss));
                    residual_vars.push((e, w, k, pc));
                }
            }
        }
    }

    // tail rows: rho_w >= V - profit_w
    let mut rhos = Vec::with_capacity(sols.len());
    for (w, terms) in profit_terms.iter().enumerate() {
        let rho = lp.add_var(format!("tail_{w}"), 0.0, f64::INFINITY, -beta * probs[w] / alpha);
        let mut coeffs = vec![(rho, 1.0), (var, -1.0)];
        coeffs.extend(terms.iter().copied());
        for (o, &c) in cap.iter().enumerate() {
            coeffs.push((c, -p.options[o].unit_cost));
        }
        lp.add_ge(format!("tail_{w}"), -p.constant, coeffs);
        rhos.push(rho);
    }
    if let Some(phi) = phi {
        // CVaR + phi >= 0
        let mut coeffs = vec![(var, 1.0), (phi, 1.0)];
        coeffs.extend(rhos.iter().enumerate().map(|(w, &r)| (r, -probs[w] / alpha)));
        lp.add_ge("reserve", 0.0, coeffs);
    }

    let mut sol = lp.solve()?;
    // Free capacity leaves the optimum flat in the capacity direction; keep
    // the smallest portfolio among the optima.
    if p.options.iter().any(|o| o.fixed.is_none() && o.unit_cost <= 0.0) && !sol.x.is_empty() {
        let objective: Vec<(VarId, f64)> = lp
            .columns
            .iter()
            .enumerate()
            .filter(|(_, c)| c.cost != 0.0)
            .map(|(j, c)| (VarId(j), c.cost))
            .collect();
        lp.add_ge("optimal", sol.objective - 1e-8 * sol.objective.abs().max(1.0), objective);
        for j in 0..lp.columns.len() {
            lp.columns[j].cost = 0.0;
        }
        for &c in &cap {
            lp.set_cost(c, -1.0);
        }
        sol = lp.solve()?;
    }
    let x = |v: VarId| if sol.x.is_empty() { 0.0 } else { sol.value(v) };
    let capacity: Vec<f64> = cap.iter().map(|&v| x(v)).collect();

    let mut residual: Vec<Vec<Vec<f64>>> = p.exposures.iter().map(|e| e.shed.clone()).collect();
    for &(e, w, k, v) in &residual_vars {
        residual[e][w][k] = x(v);
    }
    let mut output = vec![sols.iter().map(|s| vec![0.0; s.num_steps()]).collect::<Vec<_>>(); p.options.len()];
    let mut soc = output.clone();
    for (o, w, k, terms, s) in &output_vars {
        output[*o][*w][*k] = terms.iter().map(|&(v, a)| a * x(v)).sum();
        if let Some(s) = s {
            soc[*o][*w][*k] = x(*s);
        }
    }
    let capital: f64 = capacity.iter().zip(&p.options).map(|(c, o)| c * o.unit_cost).sum();
    let profits: Vec<f64> = (0..sols.len())
        .map(|w| {
            let losses: f64 = residual_vars
                .iter()
                .filter(|r| r.1 == w)
                .map(|&(e, _, k, v)| x(v) * sols[w].step_weight(k) * p.exposures[e].rate[w][k])
                .sum();
            p.constant - losses - capital
        })
        .collect();
    let cvar = discrete_cvar(&profits, &probs, alpha)?;
    let cvar_lp = x(var) - rhos.iter().enumerate().map(|(w, &r)| probs[w] * x(r)).sum::<f64>() / alpha;
    let phi_value = match (phi, p.capital_cost) {
        (Some(v), Some(g)) if g > 0.0 => x(v),
        // without a holding cost any reserve above the floor is optimal
        (Some(_), _) => (-cvar).max(0.0),
        (None, _) => 0.0,
    };
    let gamma = p.capital_cost.unwrap_or(0.0);
    let utility = (1.0 - beta) * expectation(&profits, &probs) + beta * cvar - gamma * phi_value;
    Ok(AgentSolution {
        capacity,
        residual,
        output,
        soc,
        profits,
        cvar,
        cvar_lp,
        phi: phi_value,
        utility,
    })
}

/// Insurer's optimum.
#[derive(Debug, Clone, PartialEq)]
pub struct InsurerSolution {
    /// MW per catalog entry.
    pub capacity: Vec<f64>,
    /// Premium income, $/year.
    pub premium_total: f64,
    pub kappa: f64,
    /// Annual profit per scenario.
    pub profits: Vec<f64>,
    /// Compensation paid per scenario.
    pub compensation: Vec<f64>,
    pub cvar: f64,
    /// CVaR as carried by the LP's auxiliary variables.
    pub cvar_lp: f64,
    pub capital_reserve: f64,
    pub utility: f64,
    /// Residual shedding, [scenario][consumer][step].
    pub residual_shed: Vec<Vec<Vec<f64>>>,
    /// Net RDER output, [catalog entry][scenario][step].
    pub rder_output: Vec<Vec<Vec<f64>>>,
    pub rder_soc: Vec<Vec<Vec<f64>>>,
}

fn check_solutions(set: &ScenarioSet, sols: &[DispatchSolution]) -> Result<()> {
    if sols.len() != set.len() || sols.iter().zip(&set.scenarios).any(|(a, b)| a.scenario_id != b.id) {
        return Err(Error::validation("insurance", "dispatch solutions do not match the scenario set"));
    }
    Ok(())
}

fn option_node(model: &SystemModel, o: &RderOption) -> Result<usize> {
    model
        .node_index(&o.node)
        .ok_or_else(|| Error::validation(format!("insurance.catalog.{}", o.id), format!("unknown node `{}`", o.node)))
}

/// Nodal shed and shed-weighted compensation rate.
fn insurer_exposures(model: &SystemModel, sols: &[DispatchSolution]) -> Vec<Exposure> {
    (0..model.nodes.len())
        .filter(|&n| model.consumers_at(n).next().is_some())
        .map(|n| {
            let mut shed = Vec::with_capacity(sols.len());
            let mut rate = Vec::with_capacity(sols.len());
            for sol in sols {
                let total = sol.nodal_shed(model, n);
                let r = (0..sol.num_steps())
                    .map(|k| {
                        if total[k] <= SHED_EPS {
                            return 0.0;
                        }
                        model.consumers_at(n).map(|d| model.consumers[d].compensation_rate * sol.shed[d][k]).sum::<f64>() / total[k]
                    })
                    .collect();
                shed.push(total);
                rate.push(r);
            }
            Exposure { node: n, shed, rate }
        })
        .collect()
}

/// Splits nodal residuals back onto consumers pro rata to their shedding.
fn allocate_residual(model: &SystemModel, sols: &[DispatchSolution], exposures: &[Exposure], residual: &[Vec<Vec<f64>>]) -> Vec<Vec<Vec<f64>>> {
    let mut out: Vec<Vec<Vec<f64>>> = sols.iter().map(|s| s.shed.iter().map(|x| vec![0.0; x.len()]).collect()).collect();
    for (e, ex) in exposures.iter().enumerate() {
        for (w, sol) in sols.iter().enumerate() {
            for k in 0..sol.num_steps() {
                let total = ex.shed[w][k];
                if total <= SHED_EPS {
                    continue;
                }
                for d in model.consumers_at(ex.node) {
                    out[w][d][k] = residual[e][w][k] * sol.shed[d][k] / total;
                }
            }
        }
    }
    out
}

fn insurance_config(model: &SystemModel) -> Result<&InsuranceConfig> {
    model
        .insurance
        .as_ref()
        .ok_or_else(|| Error::validation("insurance", "the model has no insurance section"))
}

/// Sizes the insurer's RDER portfolio against the wholesale shedding in
/// `sols`, collecting `premium_total` and paying `kappa` of RDER capital.
pub fn solve_insurer(
    model: &SystemModel,
    set: &ScenarioSet,
    sols: &[DispatchSolution],
    ins: &InsuranceConfig,
    premium_total: f64,
    kappa: f64,
) -> Result<InsurerSolution> {
    check_solutions(set, sols)?;
    let exposures = insurer_exposures(model, sols);
    let options = ins
        .catalog
        .iter()
        .map(|o| {
            Ok(SizedOption {
                option: o,
                node: option_node(model, o)?,
                unit_cost: kappa * o.invest_cost,
                fixed: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let problem = AgentProblem {
        exposures,
        options,
        constant: premium_total,
        risk: ins.risk(),
        capital_cost: Some(ins.capital_cost),
    };
    let sol = solve_agent(set, sols, &problem)?;
    let compensation = sol.profits.iter().map(|p| premium_total - p - capital_of(&sol, &problem)).collect();
    Ok(InsurerSolution {
        residual_shed: allocate_residual(model, sols, &problem.exposures, &sol.residual),
        capacity: sol.capacity,
        premium_total,
        kappa,
        profits: sol.profits,
        compensation,
        cvar: sol.cvar,
        cvar_lp: sol.cvar_lp,
        capital_reserve: sol.phi,
        utility: sol.utility,
        rder_output: sol.output,
        rder_soc: sol.soc,
    })
}

fn capital_of(sol: &AgentSolution, p: &AgentProblem<'_>) -> f64 {
    sol.capacity.iter().zip(&p.options).map(|(c, o)| c * o.unit_cost).sum()
}

/// A consumer's optimum.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsumerSolution {
    pub consumer: String,
    /// MW per catalog entry (zero away from the consumer's node).
    pub capacity: Vec<f64>,
    pub surplus: Vec<f64>,
    pub cvar: f64,
    pub utility: f64,
    /// Residual shedding after own RDER, [scenario][step].
    pub residual_shed: Vec<Vec<f64>>,
}

/// Sizes consumer `d`'s own RDER against `shed` ([scenario][step]) paying
/// `1 - kappa` of capital cost and `premium` per year.
#[allow(clippy::too_many_arguments)]
pub fn solve_consumer(
    model: &SystemModel,
    set: &ScenarioSet,
    sols: &[DispatchSolution],
    d: usize,
    shed: &[Vec<f64>],
    catalog: &[RderOption],
    kappa: f64,
    premium: f64,
) -> Result<ConsumerSolution> {
    check_solutions(set, sols)?;
    let c: &Consumer = &model.consumers[d];
    let node = model.consumer_node(d);
    let net_loss = c.voll - c.compensation_rate;
    let exposure = Exposure {
        node,
        shed: shed.to_vec(),
        rate: shed.iter().map(|s| vec![net_loss; s.len()]).collect(),
    };
    let mut options = Vec::new();
    let mut slots = Vec::new();
    for (i, o) in catalog.iter().enumerate() {
        if option_node(model, o)? == node {
            options.push(SizedOption {
                option: o,
                node,
                unit_cost: (1.0 - kappa) * o.invest_cost,
                fixed: None,
            });
            slots.push(i);
        }
    }
    let problem = AgentProblem {
        exposures: vec![exposure],
        options,
        constant: -premium,
        risk: RiskParams {
            beta: c.beta,
            alpha: c.alpha,
        },
        capital_cost: None,
    };
    let sol = solve_agent(set, sols, &problem)?;
    let mut capacity = vec![0.0; catalog.len()];
    for (slot, cap) in slots.iter().zip(&sol.capacity) {
        capacity[*slot] = *cap;
    }
    Ok(ConsumerSolution {
        consumer: c.id.clone(),
        capacity,
        surplus: sol.profits,
        cvar: sol.cvar,
        utility: sol.utility,
        residual_shed: sol.residual.into_iter().next().expect("one exposure"),
    })
}

/// Residual shedding per consumer, [scenario][consumer][step], when the
/// catalog entries are built at the given capacities and dispatched to
/// minimise lost-load cost.
pub fn residual_with_capacity(
    model: &SystemModel,
    set: &ScenarioSet,
    sols: &[DispatchSolution],
    catalog: &[RderOption],
    capacity: &[f64],
) -> Result<Vec<Vec<Vec<f64>>>> {
    check_solutions(set, sols)?;
    let mut exposures = insurer_exposures(model, sols);
    for ex in &mut exposures {
        for (w, sol) in sols.iter().enumerate() {
            for k in 0..sol.num_steps() {
                ex.rate[w][k] = if ex.shed[w][k] > SHED_EPS {
                    model.consumers_at(ex.node).map(|d| model.consumers[d].voll * sol.shed[d][k]).sum::<f64>() / ex.shed[w][k]
                } else {
                    0.0
                };
            }
        }
    }
    let options = catalog
        .iter()
        .zip(capacity)
        .map(|(o, &c)| {
            Ok(SizedOption {
                option: o,
                node: option_node(model, o)?,
                unit_cost: 0.0,
                fixed: Some(c),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let problem = AgentProblem {
        exposures,
        options,
        constant: 0.0,
        risk: RiskParams { beta: 0.0, alpha: 1.0 },
        capital_cost: None,
    };
    let sol = solve_agent(set, sols, &problem)?;
    Ok(allocate_residual(model, sols, &problem.exposures, &sol.residual))
}

/// Expected annual shed energy per consumer, MWh.
pub fn expected_shed_energy(model: &SystemModel, sols: &[DispatchSolution]) -> Vec<f64> {
    (0..model.consumers.len())
        .map(|d| sols.iter().map(|s| s.probability * s.annual_energy(&s.shed[d])).sum())
        .collect()
}

/// Premium split across consumers in proportion to `base` (equal split when
/// `base` is all zero), scaled to `total`.
pub fn allocate_premium(base: &[f64], total: f64) -> Vec<f64> {
    let sum: f64 = base.iter().sum();
    if sum > 0.0 {
        base.iter().map(|b| total * b / sum).collect()
    } else {
        vec![total / base.len().max(1) as f64; base.len()]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BreakEven {
    pub premium_total: f64,
    /// Per consumer, proportional to expected shed energy.
    pub premiums: Vec<f64>,
    pub insurer: InsurerSolution,
    pub iterations: usize,
}

/// Total premium at which the insurer's CVaR is zero (within $1), found by
/// bisection with the insurer LP re-solved at every trial premium.
pub fn required_breakeven_premium(
    model: &SystemModel,
    set: &ScenarioSet,
    sols: &[DispatchSolution],
    ins: &InsuranceConfig,
    kappa: f64,
    premium_cap: f64,
) -> Result<BreakEven> {
    let base = expected_shed_energy(model, sols);
    let solve = |t: f64| solve_insurer(model, set, sols, ins, t, kappa);
    let finish = |t: f64, insurer: InsurerSolution, iterations: usize| BreakEven {
        premium_total: t,
        premiums: allocate_premium(&base, t),
        insurer,
        iterations,
    };
    let at_zero = solve(0.0)?;
    if at_zero.cvar >= -1.0 {
        return Ok(finish(0.0, at_zero, 1));
    }
    let mut lo = 0.0;
    let mut hi = (-at_zero.cvar).max(1.0);
    let mut iterations = 1;
    let mut upper = loop {
        let s = solve(hi)?;
        iterations += 1;
        if s.cvar.abs() <= 1.0 {
            return Ok(finish(hi, s, iterations));
        }
        if s.cvar > 0.0 {
            break s;
        }
        lo = hi;
        hi *= 2.0;
        if hi > premium_cap {
            return Err(Error::Solver(format!("no solvent premium below {premium_cap}")));
        }
    };
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let s = solve(mid)?;
        iterations += 1;
        if s.cvar.abs() <= 1.0 {
            return Ok(finish(mid, s, iterations));
        }
        if s.cvar < 0.0 {
            lo = mid;
        } else {
            hi = mid;
            upper = s;
        }
        if hi - lo < 1e-9 * hi.max(1.0) {
            break;
        }
    }
    Err(Error::Solver(format!(
        "break-even bisection stalled between {lo} and {hi} (CVaR {} at the upper end)",
        upper.cvar
    )))
}

/// Realised consumer investment at one subsidy level.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsidyPoint {
    pub kappa: f64,
    /// Insurer-viable MW per catalog entry.
    pub insurer_capacity: Vec<f64>,
    /// MW each consumer would build, [consumer][catalog entry].
    pub consumer_demand: Vec<Vec<f64>>,
    /// MW actually built, [consumer][catalog entry].
    pub realised: Vec<Vec<f64>>,
    pub total_insurer: f64,
    pub total_demand: f64,
    pub total_realised: f64,
    /// Capacity-weighted duration of realised storage, hours.
    pub average_duration: f64,
}

/// Caps consumer demand per catalog entry at the insurer-viable capacity,
/// rationing pro rata when the cap binds.
pub fn ration(cap: f64, demand: &[f64]) -> Vec<f64> {
    let total: f64 = demand.iter().sum();
    if total <= cap || total <= 0.0 {
        demand.to_vec()
    } else {
        demand.iter().map(|d| cap * d / total).collect()
    }
}

/// For each subsidy level, the insurer-viable RDER capacity, consumer demand
/// for subsidised RDER and the realised (capped) investment.
pub fn subsidy_equilibrium(
    model: &SystemModel,
    set: &ScenarioSet,
    sols: &[DispatchSolution],
    kappas: &[f64],
    premium_total: f64,
) -> Result<Vec<SubsidyPoint>> {
    let ins = insurance_config(model)?;
    let premiums = allocate_premium(&expected_shed_energy(model, sols), premium_total);
    kappas
        .par_iter()
        .map(|&kappa| {
            let insurer = solve_insurer(model, set, sols, ins, premium_total, kappa)?;
            let consumer_demand = (0..model.consumers.len())
                .map(|d| {
                    let shed: Vec<Vec<f64>> = sols.iter().map(|s| s.shed[d].clone()).collect();
                    Ok(solve_consumer(model, set, sols, d, &shed, &ins.catalog, kappa, premiums[d])?.capacity)
                })
                .collect::<Result<Vec<_>>>()?;
            let mut realised = vec![vec![0.0; ins.catalog.len()]; model.consumers.len()];
            for o in 0..ins.catalog.len() {
                let demand: Vec<f64> = consumer_demand.iter().map(|c| c[o]).collect();
                for (d, x) in ration(insurer.capacity[o], &demand).into_iter().enumerate() {
                    realised[d][o] = x;
                }
            }
            let total_realised: f64 = realised.iter().flatten().sum();
            let (mut storage_mw, mut storage_mwh) = (0.0, 0.0);
            for row in &realised {
                for (o, &x) in row.iter().enumerate() {
                    if ins.catalog[o].kind == ResourceKind::RderStorage {
                        storage_mw += x;
                        storage_mwh += x * ins.catalog[o].duration;
                    }
                }
            }
            Ok(SubsidyPoint {
                kappa,
                total_insurer: insurer.capacity.iter().sum(),
                total_demand: consumer_demand.iter().flatten().sum(),
                insurer_capacity: insurer.capacity,
                consumer_demand,
                realised,
                total_realised,
                average_duration: if storage_mw > 0.0 { storage_mwh / storage_mw } else { 0.0 },
            })
        })
        .collect()
}

/// Everything the insurance stage produces.
#[derive(Debug, Clone, PartialEq)]
pub struct InsuranceOutcome {
    pub mode: InsuranceMode,
    pub kappa: f64,
    /// Premium charged to each consumer.
    pub premiums: Vec<f64>,
    pub breakeven_premium: f64,
    pub insurer: InsurerSolution,
    pub consumers: Vec<ConsumerSolution>,
    /// Subsidy mode only: realised consumer investment at `kappa`.
    pub subsidy: Option<SubsidyPoint>,
    /// Shedding left after all RDER, [scenario][consumer][step].
    pub residual_shed: Vec<Vec<Vec<f64>>>,
}

/// Default premium ceiling for the break-even search, $/year.
pub const PREMIUM_CAP: f64 = 1e13;

/// Runs the insurer and consumer problems on the equilibrium dispatch.
///
/// Premiums are the consumers' configured premiums when any is positive,
/// otherwise the break-even premium allocated by expected shed energy. In
/// direct mode the insurer owns the RDER and consumers size any further RDER
/// at full cost against the insurer's residual; in subsidy mode consumers
/// build subsidised RDER up to the insurer-viable capacity.
pub fn run_insurance(model: &SystemModel, set: &ScenarioSet, sols: &[DispatchSolution]) -> Result<InsuranceOutcome> {
    let ins = insurance_config(model)?;
    let kappa = ins.kappa();
    let breakeven = required_breakeven_premium(model, set, sols, ins, kappa, PREMIUM_CAP)?;
    let configured: Vec<f64> = model.consumers.iter().map(|c| c.premium).collect();
    let (premiums, insurer) = if configured.iter().any(|&p| p > 0.0) {
        let total = configured.iter().sum();
        (configured, solve_insurer(model, set, sols, ins, total, kappa)?)
    } else {
        (breakeven.premiums.clone(), breakeven.insurer.clone())
    };
    match ins.mode {
        InsuranceMode::Direct => {
            let consumers = (0..model.consumers.len())
                .into_par_iter()
                .map(|d| {
                    let shed: Vec<Vec<f64>> = insurer.residual_shed.iter().map(|s| s[d].clone()).collect();
                    solve_consumer(model, set, sols, d, &shed, &ins.catalog, 0.0, premiums[d])
                })
                .collect::<Result<Vec<_>>>()?;
            let residual_shed = (0..sols.len())
                .map(|w| consumers.iter().map(|c| c.residual_shed[w].clone()).collect())
                .collect();
            Ok(InsuranceOutcome {
                mode: ins.mode,
                kappa,
                premiums,
                breakeven_premium: breakeven.premium_total,
                insurer,
                consumers,
                subsidy: None,
                residual_shed,
            })
        }
        InsuranceMode::Subsidy => {
            let point = subsidy_equilibrium(model, set, sols, &[kappa], premiums.iter().sum())?
                .pop()
                .expect("one subsidy level");
            let consumers = (0..model.consumers.len())
                .into_par_iter()
                .map(|d| {
                    let shed: Vec<Vec<f64>> = sols.iter().map(|s| s.shed[d].clone()).collect();
                    solve_consumer(model, set, sols, d, &shed, &ins.catalog, kappa, premiums[d])
                })
                .collect::<Result<Vec<_>>>()?;
            let mut built = vec![0.0; ins.catalog.len()];
            for row in &point.realised {
                for (b, x) in built.iter_mut().zip(row) {
                    *b += x;
                }
            }
            let residual_shed = residual_with_capacity(model, set, sols, &ins.catalog, &built)?;
            Ok(InsuranceOutcome {
                mode: ins.mode,
                kappa,
                premiums,
                breakeven_premium: breakeven.premium_total,
                insurer,
                consumers,
                subsidy: Some(point),
                residual_shed,
            })
        }
    }
}

/// Results table: one row per agent with capacity by technology, storage
/// duration, premium, utility and capital reserve.
pub fn write_insurance_csv<W: Write>(writer: W, model: &SystemModel, outcome: &InsuranceOutcome) -> Result<()> {
    let ins = insurance_config(model)?;
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["entity", "kappa", "solar_mw", "storage_mw", "storage_hours", "premium", "utility", "capital_reserve"])?;
    let split = |caps: &[f64]| {
        let (mut solar, mut storage, mut mwh) = (0.0, 0.0, 0.0);
        for (o, &c) in ins.catalog.iter().zip(caps) {
            match o.kind {
                ResourceKind::RderSolar => solar += c,
                _ => {
                    storage += c;
                    mwh += c * o.duration;
                }
            }
        }
        (solar, storage, if storage > 0.0 { mwh / storage } else { 0.0 })
    };
    let f = |x: f64| format!("{x:.6}");
    let (s, st, h) = split(&outcome.insurer.capacity);
    w.write_record([
        "insurer".to_string(),
        f(outcome.kappa),
        f(s),
        f(st),
        f(h),
        f(outcome.insurer.premium_total),
        f(outcome.insurer.utility),
        f(outcome.insurer.capital_reserve),
    ])?;
    for (d, c) in outcome.consumers.iter().enumerate() {
        let caps = match &outcome.subsidy {
            Some(p) => p.realised[d].clone(),
            None => c.capacity.clone(),
        };
        let (s, st, h) = split(&caps);
        w.write_record([
            c.consumer.clone(),
            f(outcome.kappa),
            f(s),
            f(st),
            f(h),
            f(outcome.premiums[d]),
            f(c.utility),
            f(0.0),
        ])?;
    }
    w.flush()?;
    Ok(())
}
