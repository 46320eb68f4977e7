//! Per-scenario economic dispatch of energy and reserves on a DC network,
//! with storage and hydro state of charge, and extraction of nodal energy
//! and system reserve prices.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lp::{LinearProgram, LpSolution, RowId, VarId};
use crate::model::{DesignKind, MarketDesign, ResourceKind, SystemModel, STEP_HOURS};
use crate::scenario::{is_chained, storage_linkage_constraints, LinkageConstraint, Scenario, ScenarioSet};

/// Constraint families, used to break residuals down.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowFamily {
    Balance,
    Shedding,
    Capacity,
    Flow,
    Soc,
    StorageLink,
    Reserve,
    ReserveShortfall,
    ReferenceAngle,
}

type Series = Vec<VarId>;

/// Where every modelled quantity lives in the LP.
#[derive(Debug, Clone)]
pub struct DispatchIndex {
    pub steps_per_day: usize,
    pub day_weights: Vec<f64>,
    /// Net output of thermal, VRE and hydro resources.
    pub generation: Vec<Option<Series>>,
    pub charge: Vec<Option<Series>>,
    pub discharge: Vec<Option<Series>>,
    /// Reserve of generators and hydro, or the discharge-side reserve of
    /// storage.
    pub reserve: Vec<Option<Series>>,
    /// Storage reserve from curtailing charge.
    pub reserve_charge: Vec<Option<Series>>,
    pub spill: Vec<Option<Series>>,
    /// `steps_per_day + 1` entries per day, the first being the day start.
    pub soc: Vec<Option<Series>>,
    pub net_change: Vec<Option<Series>>,
    pub boundary: Vec<Option<Series>>,
    pub shed: Vec<Series>,
    pub shortfall: Vec<Series>,
    pub angle: Vec<Series>,
    pub balance_rows: Vec<Vec<RowId>>,
    pub reserve_rows: Vec<RowId>,
    pub flow_rows: Vec<Vec<RowId>>,
    pub families: Vec<RowFamily>,
}

impl DispatchIndex {
    pub fn num_steps(&self) -> usize {
        self.day_weights.len() * self.steps_per_day
    }

    /// Hours of the year one step of the day holding `k` stands for.
    pub fn step_weight(&self, k: usize) -> f64 {
        self.day_weights[k / self.steps_per_day] * STEP_HOURS
    }
}

/// An assembled dispatch LP and its index.
#[derive(Debug, Clone)]
pub struct DispatchProblem {
    pub scenario_id: String,
    pub probability: f64,
    pub design: DesignKind,
    pub lp: LinearProgram,
    pub index: DispatchIndex,
    /// Demand per consumer and step, MW.
    pub demand: Vec<Vec<f64>>,
}

/// Primal dispatch and prices for one scenario. Per-resource series are
/// indexed like `model.resources` and are all-zero for unbuilt resources;
/// step `k` is step `k % steps_per_day` of representative day
/// `k / steps_per_day`.
#[derive(Debug, Clone, PartialEq)]
pub struct DispatchSolution {
    pub scenario_id: String,
    pub probability: f64,
    pub design: DesignKind,
    pub steps_per_day: usize,
    pub day_weights: Vec<f64>,
    /// Net injection; discharge minus charge for storage.
    pub generation: Vec<Vec<f64>>,
    pub charge: Vec<Vec<f64>>,
    pub discharge: Vec<Vec<f64>>,
    /// Total reserve; for storage the sum of both sides.
    pub reserve: Vec<Vec<f64>>,
    pub reserve_charge: Vec<Vec<f64>>,
    pub reserve_discharge: Vec<Vec<f64>>,
    pub spill: Vec<Vec<f64>>,
    /// End-of-step state of charge, MWh.
    pub soc: Vec<Vec<f64>>,
    /// State of charge at the start of each representative day.
    pub soc_start: Vec<Vec<f64>>,
    pub net_change: Vec<Vec<f64>>,
    pub boundary_soc: Vec<Vec<f64>>,
    pub demand: Vec<Vec<f64>>,
    pub shed: Vec<Vec<f64>>,
    pub reserve_shortfall: Vec<Vec<f64>>,
    pub angle: Vec<Vec<f64>>,
    pub flow: Vec<Vec<f64>>,
    /// $/MWh per node and step.
    pub energy_price: Vec<Vec<f64>>,
    /// $/MWh per step; zero without a reserve market.
    pub reserve_price: Vec<f64>,
    /// Annual dispatch cost, $.
    pub objective: f64,
    pub row_duals: Vec<f64>,
    pub reduced_costs: Vec<f64>,
}

impl DispatchSolution {
    pub fn num_steps(&self) -> usize {
        self.day_weights.len() * self.steps_per_day
    }

    pub fn step_weight(&self, k: usize) -> f64 {
        self.day_weights[k / self.steps_per_day] * STEP_HOURS
    }

    /// Annual energy (MWh) of a MW series.
    pub fn annual_energy(&self, series: &[f64]) -> f64 {
        series.iter().enumerate().map(|(k, x)| x * self.step_weight(k)).sum()
    }

    /// Shedding summed over the consumers at `node`, per step.
    pub fn nodal_shed(&self, model: &SystemModel, node: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.num_steps()];
        for d in model.consumers_at(node) {
            for (o, x) in out.iter_mut().zip(&self.shed[d]) {
                *o += x;
            }
        }
        out
    }

    pub fn annual_demand(&self) -> f64 {
        self.demand.iter().map(|d| self.annual_energy(d)).sum()
    }

    pub fn annual_shed(&self) -> f64 {
        self.shed.iter().map(|d| self.annual_energy(d)).sum()
    }
}

fn day_value(map: &std::collections::BTreeMap<String, Vec<f64>>, id: &str, t: usize) -> Option<f64> {
    map.get(id).map(|v| v[t])
}

/// Assembles the dispatch LP of one scenario. Only built resources enter.
/// Costs are annualised: each step carries its day weight times the half
/// hour, so the objective is in $ per year.
pub fn build_economic_dispatch(model: &SystemModel, scenario: &Scenario, design: &MarketDesign) -> Result<DispatchProblem> {
    let spd = scenario.steps_per_day;
    let days = scenario.days.len();
    if spd == 0 || days == 0 {
        return Err(Error::validation(format!("scenarios.{}", scenario.id), "zero-length horizon"));
    }
    let n_steps = spd * days;
    let missing = |what: String| Error::validation(format!("scenarios.{}", scenario.id), format!("missing trace: {what}"));
    let weights: Vec<f64> = scenario.days.iter().map(|d| d.weight as f64).collect();
    let cost_weight = |k: usize| weights[k / spd] * STEP_HOURS;
    let reserves = design.has_reserves();

    let mut lp = LinearProgram::minimise();
    let mut families = Vec::new();
    let nr = model.resources.len();
    let mut ix = DispatchIndex {
        steps_per_day: spd,
        day_weights: weights.clone(),
        generation: vec![None; nr],
        charge: vec![None; nr],
        discharge: vec![None; nr],
        reserve: vec![None; nr],
        reserve_charge: vec![None; nr],
        spill: vec![None; nr],
        soc: vec![None; nr],
        net_change: vec![None; nr],
        boundary: vec![None; nr],
        shed: Vec::new(),
        shortfall: Vec::new(),
        angle: Vec::new(),
        balance_rows: Vec::new(),
        reserve_rows: Vec::new(),
        flow_rows: Vec::new(),
        families: Vec::new(),
    };
    macro_rules! row {
        ($fam:expr, $call:expr) => {{
            let r = $call;
            families.push($fam);
            r
        }};
    }

    // demand per consumer
    let mut demand = vec![vec![0.0; n_steps]; model.consumers.len()];
    for (d, c) in model.consumers.iter().enumerate() {
        let node = &model.nodes[model.consumer_node(d)].id;
        let share = c.share.unwrap_or(1.0);
        for (di, day) in scenario.days.iter().enumerate() {
            let series = day.demand.get(node).ok_or_else(|| missing(format!("demand for node `{node}`")))?;
            if series.len() != spd {
                return Err(missing(format!("demand for node `{node}` has {} steps", series.len())));
            }
            for t in 0..spd {
                demand[d][di * spd + t] = series[t] * share;
            }
        }
    }

    // per-node injections, collected before balance rows are written
    let mut injections: Vec<Vec<Vec<(VarId, f64)>>> = vec![vec![Vec::new(); n_steps]; model.nodes.len()];
    let mut reserve_terms: Vec<Vec<(VarId, f64)>> = vec![Vec::new(); n_steps];

    for (r, res) in model.resources.iter().enumerate() {
        if !res.built {
            continue;
        }
        let node = model.resource_node(r);
        let avail = |di: usize, t: usize| -> Result<f64> {
            match day_value(&scenario.days[di].availability, &res.id, t) {
                Some(a) => Ok(a),
                None if res.kind.needs_availability_trace() => Err(missing(format!("availability for `{}`", res.id))),
                None => Ok(1.0),
            }
        };
        let vc = |di: usize, t: usize| day_value(&scenario.days[di].variable_cost, &res.id, t).unwrap_or(res.variable_cost);
        match res.kind {
            ResourceKind::ThermalGen | ResourceKind::VreGen | ResourceKind::Hydro => {
                let mut g = Vec::with_capacity(n_steps);
                let mut rv = Vec::with_capacity(n_steps);
                for k in 0..n_steps {
                    let (di, t) = (k / spd, k % spd);
                    let w = cost_weight(k);
                    let gv = lp.add_var(format!("gen_{}_{k}", res.id), 0.0, f64::INFINITY, w * vc(di, t));
                    injections[node][k].push((gv, 1.0));
                    let mut cap = vec![(gv, 1.0)];
                    if reserves {
                        let v = lp.add_var(format!("res_{}_{k}", res.id), 0.0, f64::INFINITY, w * res.reserve_cost);
                        cap.push((v, 1.0));
                        reserve_terms[k].push((v, 1.0));
                        rv.push(v);
                    }
                    let a = avail(di, t)?;
                    row!(RowFamily::Capacity, lp.add_le(format!("cap_{}_{k}", res.id), res.capacity * a, cap));
                    g.push(gv);
                }
                ix.generation[r] = Some(g);
                if reserves {
                    ix.reserve[r] = Some(rv);
                }
            }
            ResourceKind::Storage => {
                let (mut c, mut dch, mut rc, mut rd) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
                for k in 0..n_steps {
                    let (di, t) = (k / spd, k % spd);
                    let w = cost_weight(k);
                    let a = avail(di, t)?;
                    let cv = lp.add_var(format!("chg_{}_{k}", res.id), 0.0, f64::INFINITY, -w * vc(di, t));
                    let dv = lp.add_var(format!("dis_{}_{k}", res.id), 0.0, f64::INFINITY, w * vc(di, t));
                    injections[node][k].push((dv, 1.0));
                    injections[node][k].push((cv, -1.0));
                    row!(RowFamily::Capacity, lp.add_le(format!("chgcap_{}_{k}", res.id), res.capacity * a, vec![(cv, 1.0)]));
                    let mut dis_cap = vec![(dv, 1.0)];
                    if reserves {
                        let up = lp.add_var(format!("resc_{}_{k}", res.id), 0.0, f64::INFINITY, w * res.reserve_cost);
                        let dn = lp.add_var(format!("resd_{}_{k}", res.id), 0.0, f64::INFINITY, w * res.reserve_cost);
                        // reserve on the charge side is delivered by curtailing charge
                        row!(RowFamily::Capacity, lp.add_le(format!("resc_{}_{k}", res.id), 0.0, vec![(up, 1.0), (cv, -1.0)]));
                        dis_cap.push((dn, 1.0));
                        reserve_terms[k].push((up, 1.0));
                        reserve_terms[k].push((dn, 1.0));
                        rc.push(up);
                        rd.push(dn);
                    }
                    row!(RowFamily::Capacity, lp.add_le(format!("discap_{}_{k}", res.id), res.capacity * a, dis_cap));
                    c.push(cv);
                    dch.push(dv);
                }
                ix.charge[r] = Some(c);
                ix.discharge[r] = Some(dch);
                if reserves {
                    ix.reserve_charge[r] = Some(rc);
                    ix.reserve[r] = Some(rd);
                }
            }
            ResourceKind::RderSolar | ResourceKind::RderStorage => unreachable!("rejected by validation"),
        }

        if res.kind.is_storage_like() {
            let e_cap = res.energy_capacity();
            let mut soc = Vec::with_capacity(days * (spd + 1));
            let mut spill = Vec::new();
            for di in 0..days {
                let start = lp.add_var(format!("soc_{}_{di}_start", res.id), 0.0, f64::INFINITY, 0.0);
                soc.push(start);
                let mut prev = start;
                for t in 0..spd {
                    let k = di * spd + t;
                    let s = lp.add_var(format!("soc_{}_{k}", res.id), 0.0, f64::INFINITY, 0.0);
                    row!(RowFamily::Soc, lp.add_le(format!("soccap_{}_{k}", res.id), e_cap, vec![(s, 1.0)]));
                    let mut coeffs = vec![(s, 1.0), (prev, -1.0)];
                    let mut rhs = 0.0;
                    if res.kind == ResourceKind::Storage {
                        let c = ix.charge[r].as_ref().expect("storage")[k];
                        let d = ix.discharge[r].as_ref().expect("storage")[k];
                        coeffs.push((c, -STEP_HOURS * res.charge_efficiency));
                        coeffs.push((d, STEP_HOURS / res.discharge_efficiency));
                    } else {
                        let g = ix.generation[r].as_ref().expect("hydro")[k];
                        let sp = lp.add_var(format!("spill_{}_{k}", res.id), 0.0, f64::INFINITY, 0.0);
                        spill.push(sp);
                        coeffs.push((g, STEP_HOURS / res.discharge_efficiency));
                        coeffs.push((sp, 1.0));
                        rhs = day_value(&scenario.days[di].inflow, &res.id, t)
                            .ok_or_else(|| missing(format!("inflow for `{}`", res.id)))?;
                    }
                    row!(RowFamily::Soc, lp.add_eq(format!("soc_{}_{k}", res.id), rhs, coeffs));
                    soc.push(s);
                    prev = s;
                }
            }
            let at = |di: usize, t: usize| soc[di * (spd + 1) + t];
            let threshold = model.scenarios.long_duration_threshold;
            let mut delta = vec![None; days];
            let mut bound = vec![None; days];
            for c in storage_linkage_constraints(scenario, res.kind, e_cap, res.duration, threshold) {
                match c {
                    LinkageConstraint::Cyclic { day } => {
                        row!(
                            RowFamily::StorageLink,
                            lp.add_eq(format!("cyclic_{}_{day}", res.id), 0.0, vec![(at(day, 0), 1.0), (at(day, spd), -1.0)])
                        );
                    }
                    LinkageConstraint::NetChange { day } => {
                        let v = lp.add_var(format!("delta_{}_{day}", res.id), f64::NEG_INFINITY, f64::INFINITY, 0.0);
                        delta[day] = Some(v);
                        row!(
                            RowFamily::StorageLink,
                            lp.add_eq(
                                format!("netchange_{}_{day}", res.id),
                                0.0,
                                vec![(v, 1.0), (at(day, spd), -1.0), (at(day, 0), 1.0)]
                            )
                        );
                    }
                    LinkageConstraint::Boundary { day, upper } => {
                        bound[day] = Some(lp.add_var(format!("boundary_{}_{day}", res.id), 0.0, upper, 0.0));
                    }
                    LinkageConstraint::DayStart { day } => {
                        let b = bound[day].expect("boundary declared first");
                        row!(
                            RowFamily::StorageLink,
                            lp.add_eq(format!("daystart_{}_{day}", res.id), 0.0, vec![(at(day, 0), 1.0), (b, -1.0)])
                        );
                    }
                    LinkageConstraint::Chain { day, weight } => {
                        let (b0, b1, d) = (bound[day].expect("b"), bound[day + 1].expect("b"), delta[day].expect("d"));
                        row!(
                            RowFamily::StorageLink,
                            lp.add_eq(format!("chain_{}_{day}", res.id), 0.0, vec![(b1, 1.0), (b0, -1.0), (d, -weight)])
                        );
                    }
                    LinkageConstraint::AnnualClosure { terms } => {
                        let coeffs = terms.iter().map(|&(day, w)| (delta[day].expect("d"), w)).collect();
                        row!(RowFamily::StorageLink, lp.add_eq(format!("closure_{}", res.id), 0.0, coeffs));
                    }
                }
            }
            if is_chained(res.kind, res.duration, threshold) {
                ix.net_change[r] = Some(delta.into_iter().map(|d| d.expect("all days")).collect());
                ix.boundary[r] = Some(bound.into_iter().map(|d| d.expect("all days")).collect());
            }
            ix.soc[r] = Some(soc);
            if res.kind == ResourceKind::Hydro {
                ix.spill[r] = Some(spill);
            }
        }
    }

    // shedding
    for (d, c) in model.consumers.iter().enumerate() {
        let node = model.consumer_node(d);
        let price = design.shed_cost_for(c);
        let mut sv = Vec::with_capacity(n_steps);
        for k in 0..n_steps {
            let v = lp.add_var(format!("shed_{}_{k}", c.id), 0.0, f64::INFINITY, cost_weight(k) * price);
            row!(RowFamily::Shedding, lp.add_le(format!("shedmax_{}_{k}", c.id), demand[d][k], vec![(v, 1.0)]));
            injections[node][k].push((v, 1.0));
            sv.push(v);
        }
        ix.shed.push(sv);
    }

    // angles and network
    for node in &model.nodes {
        ix.angle.push(
            (0..n_steps)
                .map(|k| lp.add_var(format!("theta_{}_{k}", node.id), f64::NEG_INFINITY, f64::INFINITY, 0.0))
                .collect(),
        );
    }
    for (l, line) in model.lines.iter().enumerate() {
        let (a, b) = model.line_ends(l);
        let mut rows = Vec::with_capacity(n_steps);
        for k in 0..n_steps {
            let (di, t) = (k / spd, k % spd);
            let avail = day_value(&scenario.days[di].line_availability, &line.id, t).unwrap_or(1.0);
            let lim = line.flow_limit * avail;
            let (ta, tb) = (ix.angle[a][k], ix.angle[b][k]);
            rows.push(row!(
                RowFamily::Flow,
                lp.add_row(format!("flow_{}_{k}", line.id), -lim, lim, vec![(ta, line.susceptance), (tb, -line.susceptance)])
            ));
            // flow a -> b leaves a and enters b
            injections[a][k].push((ta, -line.susceptance));
            injections[a][k].push((tb, line.susceptance));
            injections[b][k].push((ta, line.susceptance));
            injections[b][k].push((tb, -line.susceptance));
        }
        ix.flow_rows.push(rows);
    }

    for (n, node) in model.nodes.iter().enumerate() {
        let mut rows = Vec::with_capacity(n_steps);
        for k in 0..n_steps {
            let nodal: f64 = model.consumers_at(n).map(|d| demand[d][k]).sum();
            let coeffs = merge_terms(std::mem::take(&mut injections[n][k]));
            rows.push(row!(RowFamily::Balance, lp.add_eq(format!("balance_{}_{k}", node.id), nodal, coeffs)));
        }
        ix.balance_rows.push(rows);
    }
    let reference = model.reference_node();
    for k in 0..n_steps {
        row!(
            RowFamily::ReferenceAngle,
            lp.add_eq(format!("refangle_{k}"), 0.0, vec![(ix.angle[reference][k], 1.0)])
        );
    }

    if reserves {
        for (i, seg) in design.ordc_segments.iter().enumerate() {
            let mut sv = Vec::with_capacity(n_steps);
            for k in 0..n_steps {
                let v = lp.add_var(format!("rsh_{i}_{k}"), 0.0, f64::INFINITY, cost_weight(k) * seg.penalty);
                row!(RowFamily::ReserveShortfall, lp.add_le(format!("rshmax_{i}_{k}"), seg.quantity, vec![(v, 1.0)]));
                reserve_terms[k].push((v, 1.0));
                sv.push(v);
            }
            ix.shortfall.push(sv);
        }
        let req = design.reserve_requirement();
        for (k, terms) in reserve_terms.into_iter().enumerate() {
            ix.reserve_rows.push(row!(RowFamily::Reserve, lp.add_ge(format!("reserve_{k}"), req, terms)));
        }
    }

    ix.families = families;
    Ok(DispatchProblem {
        scenario_id: scenario.id.clone(),
        probability: scenario.probability,
        design: design.kind,
        lp,
        index: ix,
        demand,
    })
}

fn merge_terms(mut terms: Vec<(VarId, f64)>) -> Vec<(VarId, f64)> {
    terms.sort_by_key(|t| t.0);
    let mut out: Vec<(VarId, f64)> = Vec::with_capacity(terms.len());
    for (v, a) in terms {
        match out.last_mut() {
            Some(last) if last.0 == v => last.1 += a,
            _ => out.push((v, a)),
        }
    }
    out.retain(|t| t.1 != 0.0);
    out
}

fn values(sol: &LpSolution, ids: &Option<Series>, len: usize) -> Vec<f64> {
    match ids {
        Some(v) => v.iter().map(|&id| sol.value(id)).collect(),
        None => vec![0.0; len],
    }
}

/// Solves a dispatch LP and converts the duals to $/MWh.
pub fn solve_economic_dispatch(problem: &DispatchProblem) -> Result<DispatchSolution> {
    let sol = problem.lp.solve()?;
    Ok(extract_solution(problem, &sol))
}

fn extract_solution(problem: &DispatchProblem, sol: &LpSolution) -> DispatchSolution {
    let ix = &problem.index;
    let n = ix.num_steps();
    let spd = ix.steps_per_day;
    let days = ix.day_weights.len();
    let nr = ix.generation.len();

    let charge: Vec<Vec<f64>> = ix.charge.iter().map(|c| values(sol, c, n)).collect();
    let discharge: Vec<Vec<f64>> = ix.discharge.iter().map(|c| values(sol, c, n)).collect();
    let generation: Vec<Vec<f64>> = (0..nr)
        .map(|r| match &ix.generation[r] {
            Some(_) => values(sol, &ix.generation[r], n),
            None => discharge[r].iter().zip(&charge[r]).map(|(d, c)| d - c).collect(),
        })
        .collect();
    let reserve_charge: Vec<Vec<f64>> = ix.reserve_charge.iter().map(|c| values(sol, c, n)).collect();
    let reserve_discharge: Vec<Vec<f64>> = ix.reserve.iter().map(|c| values(sol, c, n)).collect();
    let reserve = reserve_charge
        .iter()
        .zip(&reserve_discharge)
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect())
        .collect();
    let mut soc = vec![vec![0.0; n]; nr];
    let mut soc_start = vec![vec![0.0; days]; nr];
    for r in 0..nr {
        if let Some(ids) = &ix.soc[r] {
            for di in 0..days {
                soc_start[r][di] = sol.value(ids[di * (spd + 1)]);
                for t in 0..spd {
                    soc[r][di * spd + t] = sol.value(ids[di * (spd + 1) + t + 1]);
                }
            }
        }
    }
    let angle: Vec<Vec<f64>> = ix.angle.iter().map(|a| a.iter().map(|&v| sol.value(v)).collect()).collect();
    let flow = ix
        .flow_rows
        .iter()
        .map(|rows| rows.iter().map(|&r| sol.row_activity[r.0]).collect())
        .collect();
    let energy_price = ix
        .balance_rows
        .iter()
        .map(|rows| rows.iter().enumerate().map(|(k, &r)| sol.dual(r) / ix.step_weight(k)).collect())
        .collect();
    let reserve_price = if ix.reserve_rows.is_empty() {
        vec![0.0; n]
    } else {
        ix.reserve_rows.iter().enumerate().map(|(k, &r)| sol.dual(r) / ix.step_weight(k)).collect()
    };

    DispatchSolution {
        scenario_id: problem.scenario_id.clone(),
        probability: problem.probability,
        design: problem.design,
        steps_per_day: spd,
        day_weights: ix.day_weights.clone(),
        generation,
        charge,
        discharge,
        reserve,
        reserve_charge,
        reserve_discharge,
        spill: ix.spill.iter().map(|c| values(sol, c, n)).collect(),
        soc,
        soc_start,
        net_change: ix.net_change.iter().map(|c| values(sol, c, days)).collect(),
        boundary_soc: ix.boundary.iter().map(|c| values(sol, c, days)).collect(),
        demand: problem.demand.clone(),
        shed: ix.shed.iter().map(|s| s.iter().map(|&v| sol.value(v)).collect()).collect(),
        reserve_shortfall: ix.shortfall.iter().map(|s| s.iter().map(|&v| sol.value(v)).collect()).collect(),
        angle,
        flow,
        energy_price,
        reserve_price,
        objective: sol.objective,
        row_duals: sol.row_duals.clone(),
        reduced_costs: sol.reduced_costs.clone(),
    }
}

/// Builds and solves every scenario of a set. Scenarios are solved in
/// parallel on the current rayon pool; results keep the set's order.
pub fn solve_scenarios(model: &SystemModel, set: &ScenarioSet, design: &MarketDesign) -> Result<Vec<DispatchSolution>> {
    set.scenarios
        .par_iter()
        .map(|s| solve_economic_dispatch(&build_economic_dispatch(model, s, design)?))
        .collect()
}

/// Worst violation per constraint family plus dual quality measures.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DispatchResiduals {
    /// MW.
    pub balance: f64,
    pub shedding: f64,
    pub capacity: f64,
    pub flow: f64,
    pub soc: f64,
    pub storage_link: f64,
    pub reserve: f64,
    pub reference_angle: f64,
    /// Variable bounds, including nonnegativity.
    pub bounds: f64,
    pub dual_infeasibility: f64,
    pub complementary_slackness: f64,
    /// Absolute gap between the annual cost and the dual objective, $.
    pub duality_gap: f64,
    pub relative_duality_gap: f64,
}

impl DispatchResiduals {
    pub fn max_primal(&self) -> f64 {
        [
            self.balance,
            self.shedding,
            self.capacity,
            self.flow,
            self.soc,
            self.storage_link,
            self.reserve,
            self.reference_angle,
            self.bounds,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

/// Rebuilds the scenario's LP and measures how well `sol` satisfies it.
/// The primal point is read back from the solution's fields, so edited
/// solutions are checked as edited.
pub fn verify_dispatch_solution(model: &SystemModel, scenario: &Scenario, sol: &DispatchSolution) -> Result<DispatchResiduals> {
    let problem = build_economic_dispatch(model, scenario, &model.design(sol.design))?;
    let ix = &problem.index;
    let lp = &problem.lp;
    let mut x = vec![0.0; lp.num_vars()];
    let spd = ix.steps_per_day;
    let mut put = |ids: &Option<Series>, vals: &[f64]| {
        if let Some(ids) = ids {
            for (id, v) in ids.iter().zip(vals) {
                x[id.0] = *v;
            }
        }
    };
    for r in 0..model.resources.len() {
        put(&ix.generation[r], &sol.generation[r]);
        put(&ix.charge[r], &sol.charge[r]);
        put(&ix.discharge[r], &sol.discharge[r]);
        put(&ix.reserve[r], &sol.reserve_discharge[r]);
        put(&ix.reserve_charge[r], &sol.reserve_charge[r]);
        put(&ix.spill[r], &sol.spill[r]);
        put(&ix.net_change[r], &sol.net_change[r]);
        put(&ix.boundary[r], &sol.boundary_soc[r]);
        if ix.soc[r].is_some() {
            let days = ix.day_weights.len();
            let mut path = Vec::with_capacity(days * (spd + 1));
            for d in 0..days {
                path.push(sol.soc_start[r][d]);
                path.extend_from_slice(&sol.soc[r][d * spd..(d + 1) * spd]);
            }
            put(&ix.soc[r], &path);
        }
    }
    for (d, s) in sol.shed.iter().enumerate() {
        put(&Some(ix.shed[d].clone()), s);
    }
    for (i, s) in sol.reserve_shortfall.iter().enumerate() {
        put(&Some(ix.shortfall[i].clone()), s);
    }
    for (n, a) in sol.angle.iter().enumerate() {
        put(&Some(ix.angle[n].clone()), a);
    }

    let activity = lp.row_activity(&x);
    let mut out = DispatchResiduals::default();
    for ((row, &a), fam) in lp.rows.iter().zip(&activity).zip(&ix.families) {
        let v = (row.lower - a).max(a - row.upper).max(0.0);
        let slot = match fam {
            RowFamily::Balance => &mut out.balance,
            RowFamily::Shedding => &mut out.shedding,
            RowFamily::Capacity => &mut out.capacity,
            RowFamily::Flow => &mut out.flow,
            RowFamily::Soc => &mut out.soc,
            RowFamily::StorageLink => &mut out.storage_link,
            RowFamily::Reserve | RowFamily::ReserveShortfall => &mut out.reserve,
            RowFamily::ReferenceAngle => &mut out.reference_angle,
        };
        *slot = slot.max(v);
    }
    let lp_sol = LpSolution {
        objective: lp.objective_at(&x),
        row_activity: activity,
        row_duals: sol.row_duals.clone(),
        reduced_costs: sol.reduced_costs.clone(),
        x,
    };
    let res = lp.residuals(&lp_sol);
    out.bounds = res.primal_bound;
    out.dual_infeasibility = res.dual_infeasibility;
    out.complementary_slackness = res.complementary_slackness;
    out.duality_gap = res.duality_gap;
    out.relative_duality_gap = res.relative_duality_gap;
    Ok(out)
}
