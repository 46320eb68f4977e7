//! Retirement and investment loops over lumpy resources until no unit
//! changes status.

use std::collections::HashMap;
use std::io::Write;

use crate::capacity::{clear_capacity_mechanism, CapacityOutcome};
use crate::dispatch::{solve_scenarios, DispatchSolution};
use crate::error::{Error, Result};
use crate::insurance::{run_insurance, InsuranceOutcome};
use crate::model::{DesignKind, MarketDesign, SystemModel};
use crate::risk::resource_utility;
use crate::scenario::ScenarioSet;

/// Market outcome for one resource mix.
#[derive(Debug, Clone)]
pub struct MixEvaluation {
    pub mix: Vec<bool>,
    pub solutions: Vec<DispatchSolution>,
    pub capacity: Option<CapacityOutcome>,
    /// Risk-weighted utility of each built resource; zero for unbuilt ones.
    pub utilities: Vec<f64>,
}

/// Solves dispatch (and the capacity auction under the capacity design) for
/// a mix and computes every built resource's utility.
pub fn evaluate_mix(model: &SystemModel, design: &MarketDesign, set: &ScenarioSet, mix: &[bool]) -> Result<MixEvaluation> {
    let m = model.with_mix(mix);
    let solutions = solve_scenarios(&m, set, design)?;
    let capacity = match design.kind {
        DesignKind::Cm => Some(clear_capacity_mechanism(&m, design, set)?),
        _ => None,
    };
    let mut utilities = vec![0.0; mix.len()];
    for (r, &built) in mix.iter().enumerate() {
        if built {
            utilities[r] = resource_utility(&m, set, r, &solutions, capacity.as_ref())?;
        }
    }
    Ok(MixEvaluation {
        mix: mix.to_vec(),
        solutions,
        capacity,
        utilities,
    })
}

/// Memoised utilities per mix.
pub struct Evaluator<'a> {
    model: &'a SystemModel,
    design: &'a MarketDesign,
    set: &'a ScenarioSet,
    cache: HashMap<Vec<bool>, Vec<f64>>,
    solves: usize,
}

impl<'a> Evaluator<'a> {
    pub fn new(model: &'a SystemModel, design: &'a MarketDesign, set: &'a ScenarioSet) -> Self {
        Self {
            model,
            design,
            set,
            cache: HashMap::new(),
            solves: 0,
        }
    }

    pub fn utilities(&mut self, mix: &[bool]) -> Result<&[f64]> {
        if !self.cache.contains_key(mix) {
            let ev = evaluate_mix(self.model, self.design, self.set, mix)?;
            self.solves += 1;
            self.cache.insert(mix.to_vec(), ev.utilities);
        }
        Ok(&self.cache[mix])
    }

    /// Utility `r` would earn with status `built` while everyone else keeps
    /// `mix`. Unbuilt resources earn nothing.
    pub fn utility_if(&mut self, mix: &[bool], r: usize, built: bool) -> Result<f64> {
        if !built {
            return Ok(0.0);
        }
        let mut m = mix.to_vec();
        m[r] = true;
        Ok(self.utilities(&m)?[r])
    }

    /// Distinct mixes evaluated so far.
    pub fn evaluations(&self) -> usize {
        self.solves
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Retirement,
    Investment,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Retirement => "retirement",
            Phase::Investment => "investment",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Retire,
    Build,
    Reject,
}

impl Action {
    pub fn as_str(self) -> &'static str {
        match self {
            Action::Retire => "retire",
            Action::Build => "build",
            Action::Reject => "reject",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogEntry {
    pub iteration: usize,
    pub phase: Phase,
    pub resource: String,
    pub action: Action,
    /// Utility that triggered the action, at the prices prevailing then.
    pub utility: f64,
}

#[derive(Debug, Clone)]
pub struct EquilibriumResult {
    pub design: DesignKind,
    pub build_status: Vec<bool>,
    /// Utilities at the final mix; zero for unbuilt resources.
    pub utilities: Vec<f64>,
    pub solutions: Vec<DispatchSolution>,
    pub capacity: Option<CapacityOutcome>,
    pub log: Vec<LogEntry>,
    /// Outer iterations run, including the final one that changed nothing.
    pub iterations: usize,
    pub evaluations: usize,
    /// Insurer and consumer outcomes on the final dispatch, when the model
    /// has an insurance section.
    pub insurance: Option<InsuranceOutcome>,
}

impl EquilibriumResult {
    /// Expected system dispatch cost at the final mix, $/year.
    pub fn expected_dispatch_cost(&self) -> f64 {
        self.solutions.iter().map(|s| s.probability * s.objective).sum()
    }
}

/// Repeatedly retires the retirable built resource with the lowest
/// negative utility (ties to the lowest id) until none is negative.
pub fn retirement_pass(
    eval: &mut Evaluator<'_>,
    model: &SystemModel,
    mix: &mut [bool],
    iteration: usize,
    log: &mut Vec<LogEntry>,
) -> Result<bool> {
    let mut changed = false;
    loop {
        let utilities = eval.utilities(mix)?.to_vec();
        let worst = (0..mix.len())
            .filter(|&r| mix[r] && model.resources[r].retirable && utilities[r] < 0.0)
            .min_by(|&a, &b| {
                utilities[a]
                    .total_cmp(&utilities[b])
                    .then_with(|| model.resources[a].id.cmp(&model.resources[b].id))
            });
        let Some(r) = worst else { return Ok(changed) };
        mix[r] = false;
        changed = true;
        log.push(LogEntry {
            iteration,
            phase: Phase::Retirement,
            resource: model.resources[r].id.clone(),
            action: Action::Retire,
            utility: utilities[r],
        });
    }
}

/// Unbuilt candidates in ascending queue position (ties to the lowest id).
pub fn investment_queue(model: &SystemModel) -> Vec<usize> {
    let mut q: Vec<usize> = (0..model.resources.len())
        .filter(|&r| model.resources[r].queue_position.is_some())
        .collect();
    q.sort_by(|&a, &b| {
        let (ra, rb) = (&model.resources[a], &model.resources[b]);
        ra.queue_position.cmp(&rb.queue_position).then_with(|| ra.id.cmp(&rb.id))
    });
    q
}

/// Sweeps the queue, keeping each candidate whose stand-alone utility the
/// entry rule admits, until a sweep adds nothing.
pub fn investment_pass(
    eval: &mut Evaluator<'_>,
    model: &SystemModel,
    mix: &mut [bool],
    iteration: usize,
    log: &mut Vec<LogEntry>,
) -> Result<bool> {
    let queue = investment_queue(model);
    let rule = model.equilibrium.entry_rule;
    let mut changed = false;
    loop {
        let mut added = false;
        for &r in &queue {
            if mix[r] {
                continue;
            }
            let u = eval.utility_if(mix, r, true)?;
            let keep = rule.admits(u);
            if keep {
                mix[r] = true;
                added = true;
            }
            log.push(LogEntry {
                iteration,
                phase: Phase::Investment,
                resource: model.resources[r].id.clone(),
                action: if keep { Action::Build } else { Action::Reject },
                utility: u,
            });
        }
        changed |= added;
        if !added {
            return Ok(changed);
        }
    }
}

fn describe_mix(model: &SystemModel, mix: &[bool]) -> String {
    let built: Vec<&str> = model
        .resources
        .iter()
        .zip(mix)
        .filter(|(_, &b)| b)
        .map(|(r, _)| r.id.as_str())
        .collect();
    format!("{{{}}}", built.join(","))
}

/// Alternates retirement and investment passes from the model's initial
/// build status until an outer iteration changes nothing.
pub fn find_market_equilibrium(model: &SystemModel, design: &MarketDesign, set: &ScenarioSet) -> Result<EquilibriumResult> {
    let mut eval = Evaluator::new(model, design, set);
    let mut mix = model.build_status();
    let mut log = Vec::new();
    let mut history = Vec::new();
    let cap = model.equilibrium.max_iterations;
    let mut converged = None;
    for iteration in 1..=cap {
        let retired = retirement_pass(&mut eval, model, &mut mix, iteration, &mut log)?;
        let built = investment_pass(&mut eval, model, &mut mix, iteration, &mut log)?;
        history.push(describe_mix(model, &mix));
        if !retired && !built {
            converged = Some(iteration);
            break;
        }
    }
    let Some(iterations) = converged else {
        let tail = history.iter().rev().take(6).rev().cloned().collect::<Vec<_>>().join(" -> ");
        return Err(Error::IterationCap { iterations: cap, trace: tail });
    };
    let evaluations = eval.evaluations();
    let final_eval = evaluate_mix(model, design, set, &mix)?;
    Ok(EquilibriumResult {
        design: design.kind,
        build_status: mix,
        utilities: final_eval.utilities,
        solutions: final_eval.solutions,
        capacity: final_eval.capacity,
        log,
        iterations,
        evaluations,
        insurance: None,
    })
}

/// Market equilibrium followed by the insurance overlay on its dispatch.
/// Insurance never feeds back into the market.
pub fn find_equilibrium(model: &SystemModel, design: &MarketDesign, set: &ScenarioSet) -> Result<EquilibriumResult> {
    let mut result = find_market_equilibrium(model, design, set)?;
    if model.insurance.as_ref().is_some_and(|i| !i.catalog.is_empty()) {
        result.insurance = Some(run_insurance(model, set, &result.solutions)?);
    }
    Ok(result)
}

/// A profitable unilateral status change.
#[derive(Debug, Clone, PartialEq)]
pub struct Deviation {
    pub resource: String,
    /// Status after the flip.
    pub built: bool,
    pub utility_at_equilibrium: f64,
    pub utility_after_flip: f64,
}

/// Utilities must improve by more than this to count as a deviation: a
/// millionth of the resource's annual capital cost, at least one cent.
pub fn deviation_tolerance(model: &SystemModel, r: usize) -> f64 {
    let res = &model.resources[r];
    (1e-6 * res.invest_cost * res.capacity).max(0.01)
}

/// Flips each resource that may act (retirable built units, unbuilt queue
/// candidates) and reports those whose utility would strictly improve.
pub fn check_no_unilateral_deviation(
    model: &SystemModel,
    design: &MarketDesign,
    set: &ScenarioSet,
    mix: &[bool],
) -> Result<Vec<Deviation>> {
    let mut eval = Evaluator::new(model, design, set);
    let mut out = Vec::new();
    for (r, res) in model.resources.iter().enumerate() {
        let may_flip = if mix[r] { res.retirable } else { res.queue_position.is_some() };
        if !may_flip {
            continue;
        }
        let now = eval.utility_if(mix, r, mix[r])?;
        let after = eval.utility_if(mix, r, !mix[r])?;
        if after > now + deviation_tolerance(model, r) {
            out.push(Deviation {
                resource: res.id.clone(),
                built: !mix[r],
                utility_at_equilibrium: now,
                utility_after_flip: after,
            });
        }
    }
    Ok(out)
}

/// Applies the log's status changes to a starting mix.
pub fn replay_log(model: &SystemModel, initial: &[bool], log: &[LogEntry]) -> Vec<bool> {
    let mut mix = initial.to_vec();
    for e in log {
        let r = model.resource_index(&e.resource).expect("logged resources exist");
        match e.action {
            Action::Retire => mix[r] = false,
            Action::Build => mix[r] = true,
            Action::Reject => {}
        }
    }
    mix
}

pub fn write_log_csv<W: Write>(writer: W, log: &[LogEntry]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["iteration", "loop", "resource", "action", "utility"])?;
    for e in log {
        w.write_record([
            e.iteration.to_string(),
            e.phase.as_str().to_string(),
            e.resource.clone(),
            e.action.as_str().to_string(),
            format!("{:.6}", e.utility),
        ])?;
    }
    w.flush()?;
    Ok(())
}
