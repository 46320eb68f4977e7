//! Weather-year traces, representative days and the weighted scenario set.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    AvailabilityProfile, ExtremeSpec, ResourceKind, SyntheticTraces, SystemModel,
};

pub const STEPS_PER_DAY: usize = 48;

/// Per-entity series keyed by entity id.
pub type SeriesMap = BTreeMap<String, Vec<f64>>;

/// One weather year at half-hourly resolution.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AnnualTrace {
    pub id: String,
    pub steps_per_day: usize,
    /// Node id -> MW.
    pub demand: SeriesMap,
    /// Resource id -> availability in [0, 1].
    pub availability: SeriesMap,
    /// Line id -> availability in [0, 1].
    pub line_availability: SeriesMap,
    /// Resource id -> MWh per step.
    pub inflow: SeriesMap,
    /// Resource id -> $/MWh.
    pub variable_cost: SeriesMap,
}

impl AnnualTrace {
    pub fn len(&self) -> usize {
        self.all_series().map(|(_, _, v)| v.len()).next().unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_days(&self) -> usize {
        self.len() / self.steps_per_day.max(1)
    }

    fn all_series(&self) -> impl Iterator<Item = (SeriesKind, &String, &Vec<f64>)> {
        SeriesKind::TRACE
            .into_iter()
            .flat_map(move |k| self.series(k).iter().map(move |(id, v)| (k, id, v)))
    }

    pub fn series(&self, kind: SeriesKind) -> &SeriesMap {
        match kind {
            SeriesKind::Demand => &self.demand,
            SeriesKind::Availability => &self.availability,
            SeriesKind::LineAvailability => &self.line_availability,
            SeriesKind::Inflow => &self.inflow,
            SeriesKind::VariableCost => &self.variable_cost,
        }
    }

    pub fn series_mut(&mut self, kind: SeriesKind) -> &mut SeriesMap {
        match kind {
            SeriesKind::Demand => &mut self.demand,
            SeriesKind::Availability => &mut self.availability,
            SeriesKind::LineAvailability => &mut self.line_availability,
            SeriesKind::Inflow => &mut self.inflow,
            SeriesKind::VariableCost => &mut self.variable_cost,
        }
    }

    /// Shared time index, value ranges and whole days.
    pub fn validate(&self) -> Result<()> {
        let path = |k: SeriesKind, id: &str| format!("traces[{}].{}.{}", self.id, k.as_str(), id);
        if self.steps_per_day == 0 {
            return Err(Error::validation(format!("traces[{}]", self.id), "steps_per_day must be > 0"));
        }
        let n = self.len();
        if n == 0 {
            return Err(Error::validation(format!("traces[{}]", self.id), "trace is empty"));
        }
        if !n.is_multiple_of(self.steps_per_day) {
            return Err(Error::validation(
                format!("traces[{}]", self.id),
                format!("{n} steps is not a whole number of days"),
            ));
        }
        for (kind, id, v) in self.all_series() {
            if v.len() != n {
                return Err(Error::validation(path(kind, id), format!("has {} steps, expected {n}", v.len())));
            }
            for (t, &x) in v.iter().enumerate() {
                let ok = match kind {
                    SeriesKind::Availability | SeriesKind::LineAvailability => (0.0..=1.0).contains(&x),
                    SeriesKind::Demand | SeriesKind::Inflow => x >= 0.0 && x.is_finite(),
                    SeriesKind::VariableCost => x.is_finite(),
                };
                if !ok {
                    return Err(Error::validation(path(kind, id), format!("value {x} out of range at step {t}")));
                }
            }
        }
        Ok(())
    }

    fn day_slice(&self, map: &SeriesMap, day: usize) -> SeriesMap {
        let (a, b) = (day * self.steps_per_day, (day + 1) * self.steps_per_day);
        map.iter().map(|(k, v)| (k.clone(), v[a..b].to_vec())).collect()
    }

    pub fn day(&self, day: usize, weight: u32) -> RepresentativeDay {
        RepresentativeDay {
            source_day: day,
            weight,
            demand: self.day_slice(&self.demand, day),
            availability: self.day_slice(&self.availability, day),
            line_availability: self.day_slice(&self.line_availability, day),
            inflow: self.day_slice(&self.inflow, day),
            variable_cost: self.day_slice(&self.variable_cost, day),
        }
    }

    /// System-coincident demand per step.
    pub fn system_demand(&self) -> Vec<f64> {
        let mut total = vec![0.0; self.len()];
        for v in self.demand.values() {
            for (t, x) in v.iter().enumerate() {
                total[t] += x;
            }
        }
        total
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SeriesKind {
    Demand,
    Availability,
    LineAvailability,
    Inflow,
    VariableCost,
}

impl SeriesKind {
    pub const TRACE: [SeriesKind; 5] = [
        SeriesKind::Demand,
        SeriesKind::Availability,
        SeriesKind::LineAvailability,
        SeriesKind::Inflow,
        SeriesKind::VariableCost,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SeriesKind::Demand => "demand",
            SeriesKind::Availability => "availability",
            SeriesKind::LineAvailability => "line_availability",
            SeriesKind::Inflow => "inflow",
            SeriesKind::VariableCost => "variable_cost",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::TRACE.into_iter().find(|k| k.as_str() == s)
    }
}

/// A day standing in for `weight` days of the year.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RepresentativeDay {
    pub source_day: usize,
    pub weight: u32,
    pub demand: SeriesMap,
    pub availability: SeriesMap,
    pub line_availability: SeriesMap,
    pub inflow: SeriesMap,
    pub variable_cost: SeriesMap,
}

impl RepresentativeDay {
    pub fn peak_system_demand(&self) -> f64 {
        let steps = self.demand.values().map(Vec::len).max().unwrap_or(0);
        (0..steps)
            .map(|t| self.demand.values().map(|v| v[t]).sum::<f64>())
            .fold(0.0, f64::max)
    }

    fn series_mut(&mut self, kind: SeriesKind) -> &mut SeriesMap {
        match kind {
            SeriesKind::Demand => &mut self.demand,
            SeriesKind::Availability => &mut self.availability,
            SeriesKind::LineAvailability => &mut self.line_availability,
            SeriesKind::Inflow => &mut self.inflow,
            SeriesKind::VariableCost => &mut self.variable_cost,
        }
    }

    fn series(&self, kind: SeriesKind) -> &SeriesMap {
        match kind {
            SeriesKind::Demand => &self.demand,
            SeriesKind::Availability => &self.availability,
            SeriesKind::LineAvailability => &self.line_availability,
            SeriesKind::Inflow => &self.inflow,
            SeriesKind::VariableCost => &self.variable_cost,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioTag {
    Base,
    Extreme,
}

impl ScenarioTag {
    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioTag::Base => "base",
            ScenarioTag::Extreme => "extreme",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub id: String,
    pub probability: f64,
    pub tag: ScenarioTag,
    pub steps_per_day: usize,
    /// Chronological order.
    pub days: Vec<RepresentativeDay>,
}

impl Scenario {
    pub fn num_steps(&self) -> usize {
        self.days.len() * self.steps_per_day
    }

    pub fn total_weight(&self) -> u32 {
        self.days.iter().map(|d| d.weight).sum()
    }

    /// Index of the day holding the largest system-coincident demand.
    pub fn peak_day(&self) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, d) in self.days.iter().enumerate() {
            let p = d.peak_system_demand();
            if best.is_none_or(|(_, b)| p > b) {
                best = Some((i, p));
            }
        }
        best.map(|(i, _)| i)
    }

    pub fn max_system_demand(&self) -> f64 {
        self.days.iter().map(RepresentativeDay::peak_system_demand).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScenarioSet {
    pub scenarios: Vec<Scenario>,
}

impl ScenarioSet {
    pub fn probabilities(&self) -> Vec<f64> {
        self.scenarios.iter().map(|s| s.probability).collect()
    }

    pub fn max_system_demand(&self) -> f64 {
        self.scenarios.iter().map(Scenario::max_system_demand).fold(0.0, f64::max)
    }

    pub fn len(&self) -> usize {
        self.scenarios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenarios.is_empty()
    }
}

fn day_features(trace: &AnnualTrace) -> Vec<Vec<f64>> {
    let spd = trace.steps_per_day;
    let days = trace.num_days();
    let mut feats = vec![Vec::new(); days];
    for v in trace.demand.values() {
        let max = v.iter().copied().fold(0.0, f64::max);
        let scale = if max > 0.0 { 1.0 / max } else { 0.0 };
        for (d, f) in feats.iter_mut().enumerate() {
            f.extend(v[d * spd..(d + 1) * spd].iter().map(|x| x * scale));
        }
    }
    for v in trace.availability.values() {
        for (d, f) in feats.iter_mut().enumerate() {
            f.extend_from_slice(&v[d * spd..(d + 1) * spd]);
        }
    }
    feats
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, center) in centers.iter().enumerate() {
        let d = sq_dist(point, center);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Picks `k` representative days by k-means (k-means++ seeding) on
/// normalised demand and availability profiles, returning the member day
/// closest to each centroid with the number of days it stands for. The
/// cluster holding the system-peak day is represented by that day.
/// Output is ordered chronologically.
pub fn cluster_representative_days(trace: &AnnualTrace, k: usize, seed: u64) -> Result<Vec<(usize, u32)>> {
    let days = trace.num_days();
    if k == 0 {
        return Err(Error::validation("representative_days", "k must be >= 1"));
    }
    if k > days {
        return Err(Error::validation(
            "representative_days",
            format!("k = {k} exceeds the {days} days in trace `{}`", trace.id),
        ));
    }
    let feats = day_features(trace);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // k-means++ seeding
    let mut chosen = vec![rng.gen_range(0..days)];
    let mut d2: Vec<f64> = feats.iter().map(|f| sq_dist(f, &feats[chosen[0]])).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut pick = days - 1;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 && target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            if d2[pick] == 0.0 {
                // rounding fell off the end
                pick = (0..days).rev().find(|&i| d2[i] > 0.0).unwrap_or(pick);
            }
            pick
        } else {
            let free: Vec<usize> = (0..days).filter(|i| !chosen.contains(i)).collect();
            free[rng.gen_range(0..free.len())]
        };
        chosen.push(next);
        for (i, f) in feats.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(f, &feats[next]));
        }
    }
    let mut centers: Vec<Vec<f64>> = chosen.iter().map(|&i| feats[i].clone()).collect();

    let mut assign: Vec<usize> = feats.iter().map(|f| nearest(f, &centers).0).collect();
    fix_empty_clusters(&feats, &centers, &mut assign, k);
    for _ in 0..500 {
        // centroid update
        let dim = feats[0].len();
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (f, &c) in feats.iter().zip(&assign) {
            counts[c] += 1;
            for (s, x) in sums[c].iter_mut().zip(f) {
                *s += x;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        let mut changed = false;
        for (i, f) in feats.iter().enumerate() {
            let (c, d) = nearest(f, &centers);
            // keep the current cluster unless strictly closer elsewhere
            if c != assign[i] && d < sq_dist(f, &centers[assign[i]]) {
                assign[i] = c;
                changed = true;
            }
        }
        changed |= fix_empty_clusters(&feats, &centers, &mut assign, k);
        if !changed {
            break;
        }
    }

    let system = trace.system_demand();
    let spd = trace.steps_per_day;
    let peak_day = system
        .iter()
        .enumerate()
        .fold((0usize, f64::NEG_INFINITY), |acc, (t, &v)| if v > acc.1 { (t, v) } else { acc })
        .0
        / spd;

    let mut reps = Vec::with_capacity(k);
    for c in 0..k {
        let members: Vec<usize> = (0..days).filter(|&i| assign[i] == c).collect();
        let medoid = if members.contains(&peak_day) {
            peak_day
        } else {
            *members
                .iter()
                .min_by(|&&a, &&b| sq_dist(&feats[a], &centers[c]).total_cmp(&sq_dist(&feats[b], &centers[c])))
                .expect("clusters are non-empty")
        };
        reps.push((medoid, members.len() as u32));
    }
    reps.sort_unstable();
    Ok(reps)
}

/// Moves the worst-fitting point of a multi-member cluster into each empty
/// cluster. Returns whether anything moved.
fn fix_empty_clusters(feats: &[Vec<f64>], centers: &[Vec<f64>], assign: &mut [usize], k: usize) -> bool {
    let mut moved = false;
    loop {
        let mut counts = vec![0usize; k];
        for &c in assign.iter() {
            counts[c] += 1;
        }
        let Some(empty) = counts.iter().position(|&n| n == 0) else {
            return moved;
        };
        let donor = (0..assign.len())
            .filter(|&i| counts[assign[i]] > 1)
            .max_by(|&a, &b| {
                sq_dist(&feats[a], &centers[assign[a]])
                    .total_cmp(&sq_dist(&feats[b], &centers[assign[b]]))
                    .then(b.cmp(&a))
            })
            .expect("k <= number of points");
        assign[donor] = empty;
        moved = true;
    }
}

/// Reduces a weather year to a base scenario of representative days.
pub fn representative_scenario(trace: &AnnualTrace, k: usize, seed: u64, probability: f64) -> Result<Scenario> {
    trace.validate()?;
    let reps = cluster_representative_days(trace, k, seed)?;
    Ok(Scenario {
        id: trace.id.clone(),
        probability,
        tag: ScenarioTag::Base,
        steps_per_day: trace.steps_per_day,
        days: reps.into_iter().map(|(d, w)| trace.day(d, w)).collect(),
    })
}

/// Derives a stylised extreme year from a base scenario. The base is left
/// untouched.
pub fn apply_extreme_perturbation(
    model: &SystemModel,
    base: &Scenario,
    spec: &ExtremeSpec,
    probability: f64,
) -> Result<Scenario> {
    spec.validate()?;
    if base.tag != ScenarioTag::Base {
        return Err(Error::validation(
            format!("extremes.{}", spec.id),
            format!("scenario `{}` is not a base scenario", base.id),
        ));
    }
    let mut out = base.clone();
    out.id = spec.id.clone();
    out.tag = ScenarioTag::Extreme;
    out.probability = probability;

    if spec.demand_scale != 1.0 {
        if let Some(p) = out.peak_day() {
            for v in out.days[p].demand.values_mut() {
                v.iter_mut().for_each(|x| *x *= spec.demand_scale);
            }
        }
    }
    let steps = base.steps_per_day;
    for r in &model.resources {
        let factor = match r.kind {
            ResourceKind::ThermalGen => 1.0 - spec.thermal_derate,
            ResourceKind::VreGen => 1.0 - spec.vre_derate,
            _ => 1.0,
        };
        if factor != 1.0 {
            for day in &mut out.days {
                let v = day.availability.entry(r.id.clone()).or_insert_with(|| vec![1.0; steps]);
                v.iter_mut().for_each(|x| *x *= factor);
            }
        }
        if r.kind == ResourceKind::Hydro && spec.hydro_inflow_scale != 1.0 {
            for day in &mut out.days {
                if let Some(v) = day.inflow.get_mut(&r.id) {
                    v.iter_mut().for_each(|x| *x *= spec.hydro_inflow_scale);
                }
            }
        }
    }
    // RDER solar shares the VRE weather
    if spec.vre_derate != 0.0 {
        if let Some(ins) = &model.insurance {
            for o in ins.catalog.iter().filter(|o| o.kind == ResourceKind::RderSolar) {
                for day in &mut out.days {
                    if let Some(v) = day.availability.get_mut(&o.id) {
                        v.iter_mut().for_each(|x| *x *= 1.0 - spec.vre_derate);
                    }
                }
            }
        }
    }
    for (line, &a) in &spec.line_availability {
        for day in &mut out.days {
            day.line_availability.insert(line.clone(), vec![a; steps]);
        }
    }
    Ok(out)
}

/// Probability of each base scenario when `n_extreme` extremes take
/// `extreme_probability` each.
pub fn base_probability(n_base: usize, n_extreme: usize, extreme_probability: f64) -> Result<f64> {
    if n_base == 0 {
        return Err(Error::validation("scenarios", "at least one base scenario is required"));
    }
    let rest = 1.0 - n_extreme as f64 * extreme_probability;
    if rest <= 0.0 {
        return Err(Error::validation("scenarios.extremes", "extreme probabilities leave no mass for base years"));
    }
    Ok(rest / n_base as f64)
}

/// Clusters every base year, perturbs the configured extremes and assigns
/// probabilities that sum to one.
pub fn build_scenario_set(model: &SystemModel, base_traces: &[AnnualTrace], seed: u64) -> Result<ScenarioSet> {
    let cfg = &model.scenarios;
    let p_ext = cfg.extreme_probability;
    let p_base = base_probability(base_traces.len(), cfg.extremes.len(), p_ext)?;
    let mut scenarios = Vec::with_capacity(base_traces.len() + cfg.extremes.len());
    for trace in base_traces {
        check_trace_coverage(model, trace)?;
        scenarios.push(representative_scenario(trace, cfg.representative_days, seed, p_base)?);
    }
    let mut extremes = Vec::with_capacity(cfg.extremes.len());
    for spec in &cfg.extremes {
        let base = match &spec.base {
            Some(id) => scenarios.iter().find(|s| &s.id == id).ok_or_else(|| {
                Error::validation(format!("extremes.{}.base", spec.id), format!("unknown base scenario `{id}`"))
            })?,
            None => &scenarios[0],
        };
        extremes.push(apply_extreme_perturbation(model, base, spec, p_ext)?);
    }
    scenarios.extend(extremes);
    // absorb rounding so the probabilities sum to one
    let total: f64 = scenarios.iter().map(|s| s.probability).sum();
    if let Some(first) = scenarios.first_mut() {
        first.probability += 1.0 - total;
    }
    Ok(ScenarioSet { scenarios })
}

/// Checks a trace carries every series the model requires.
pub fn check_trace_coverage(model: &SystemModel, trace: &AnnualTrace) -> Result<()> {
    let missing = |what: String| Error::validation(format!("traces[{}]", trace.id), format!("missing {what}"));
    for (n, node) in model.nodes.iter().enumerate() {
        if model.consumers_at(n).next().is_some() && !trace.demand.contains_key(&node.id) {
            return Err(missing(format!("demand for node `{}`", node.id)));
        }
    }
    for id in trace.demand.keys() {
        match model.node_index(id) {
            None => return Err(missing(format!("node `{id}` referenced by demand (unknown)"))),
            Some(n) => {
                let has_load = trace.demand[id].iter().any(|&x| x > 0.0);
                if has_load && model.consumers_at(n).next().is_none() {
                    return Err(Error::validation(
                        format!("traces[{}].demand.{id}", trace.id),
                        "node has demand but no consumer",
                    ));
                }
            }
        }
    }
    for r in &model.resources {
        if r.kind.needs_availability_trace() && !trace.availability.contains_key(&r.id) {
            return Err(missing(format!("availability for `{}`", r.id)));
        }
        if r.kind == ResourceKind::Hydro && !trace.inflow.contains_key(&r.id) {
            return Err(missing(format!("inflow for `{}`", r.id)));
        }
    }
    if let Some(ins) = &model.insurance {
        for o in &ins.catalog {
            if o.kind == ResourceKind::RderSolar && !trace.availability.contains_key(&o.id) {
                return Err(missing(format!("availability for `{}`", o.id)));
            }
        }
    }
    Ok(())
}

/// Constraint descriptors tying a storage or hydro SoC path together across
/// the representative days. `S[d, t]` is the SoC at the end of step `t` of
/// day `d` (`t = 0` is the start), `delta[d]` the net change over day `d`,
/// and `B[d]` the chained SoC at the start of the first repetition of day `d`.
#[derive(Debug, Clone, PartialEq)]
pub enum LinkageConstraint {
    /// `S[day, 0] = S[day, T]`.
    Cyclic { day: usize },
    /// `delta[day] = S[day, T] - S[day, 0]`.
    NetChange { day: usize },
    /// Declares `B[day]` with bounds `[0, upper]`.
    Boundary { day: usize, upper: f64 },
    /// `S[day, 0] = B[day]`.
    DayStart { day: usize },
    /// `B[day + 1] = B[day] + weight * delta[day]`.
    Chain { day: usize, weight: f64 },
    /// `sum weight * delta[day] = 0`, closing the annual cycle.
    AnnualClosure { terms: Vec<(usize, f64)> },
}

/// Whether a storage-like resource is chained across days rather than
/// cycled within each day.
pub fn is_chained(kind: ResourceKind, duration: f64, threshold: f64) -> bool {
    kind == ResourceKind::Hydro || (kind == ResourceKind::Storage && duration > threshold)
}

pub fn storage_linkage_constraints(
    scenario: &Scenario,
    kind: ResourceKind,
    energy_capacity: f64,
    duration: f64,
    threshold: f64,
) -> Vec<LinkageConstraint> {
    let days = scenario.days.len();
    if !is_chained(kind, duration, threshold) {
        return (0..days).map(|day| LinkageConstraint::Cyclic { day }).collect();
    }
    let mut out = Vec::with_capacity(4 * days + 1);
    for day in 0..days {
        out.push(LinkageConstraint::NetChange { day });
        out.push(LinkageConstraint::Boundary { day, upper: energy_capacity });
        out.push(LinkageConstraint::DayStart { day });
    }
    for day in 0..days.saturating_sub(1) {
        out.push(LinkageConstraint::Chain {
            day,
            weight: scenario.days[day].weight as f64,
        });
    }
    out.push(LinkageConstraint::AnnualClosure {
        terms: scenario.days.iter().enumerate().map(|(d, x)| (d, x.weight as f64)).collect(),
    });
    out
}

#[derive(Debug, Deserialize, Serialize)]
struct TraceRow {
    series_kind: String,
    entity_id: String,
    scenario_id: String,
    step_index: usize,
    value: f64,
}

/// Reads half-hourly traces in long CSV form
/// `series_kind,entity_id,scenario_id,step_index,value`, one
/// [`AnnualTrace`] per scenario id in first-seen order.
pub fn read_traces_csv(path: &Path) -> Result<Vec<AnnualTrace>> {
    let file = File::open(path)?;
    read_traces(file, path)
}

type RawPoint = (usize, f64, usize);

pub fn read_traces<R: Read>(reader: R, path: &Path) -> Result<Vec<AnnualTrace>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut order: Vec<String> = Vec::new();
    // trace id -> series -> (day-step index, value, csv line)
    let mut raw: BTreeMap<String, BTreeMap<(SeriesKind, String), Vec<RawPoint>>> = BTreeMap::new();
    for (i, rec) in rdr.deserialize::<TraceRow>().enumerate() {
        let row = i + 2; // header is line 1
        let rec = rec.map_err(|e| Error::Trace {
            file: path.to_path_buf(),
            row,
            message: e.to_string(),
        })?;
        let kind = SeriesKind::parse(&rec.series_kind).ok_or_else(|| Error::Trace {
            file: path.to_path_buf(),
            row,
            message: format!("unknown series_kind `{}`", rec.series_kind),
        })?;
        if !rec.value.is_finite() {
            return Err(Error::Trace {
                file: path.to_path_buf(),
                row,
                message: "value is not finite".into(),
            });
        }
        if !raw.contains_key(&rec.scenario_id) {
            order.push(rec.scenario_id.clone());
        }
        raw.entry(rec.scenario_id)
            .or_default()
            .entry((kind, rec.entity_id))
            .or_default()
            .push((rec.step_index, rec.value, row));
    }
    let mut out = Vec::with_capacity(order.len());
    for id in order {
        let mut trace = AnnualTrace {
            id: id.clone(),
            steps_per_day: STEPS_PER_DAY,
            ..Default::default()
        };
        for ((kind, entity), mut pts) in raw.remove(&id).unwrap_or_default() {
            pts.sort_by_key(|p| p.0);
            for (expect, &(step, _, row)) in pts.iter().enumerate() {
                if step != expect {
                    return Err(Error::Trace {
                        file: path.to_path_buf(),
                        row,
                        message: format!(
                            "{} `{entity}` in `{id}`: expected step {expect}, found {step}",
                            kind.as_str()
                        ),
                    });
                }
            }
            trace.series_mut(kind).insert(entity, pts.into_iter().map(|p| p.1).collect());
        }
        trace.validate().map_err(|e| Error::Trace {
            file: path.to_path_buf(),
            row: 0,
            message: e.to_string(),
        })?;
        out.push(trace);
    }
    Ok(out)
}

pub fn write_traces<W: Write>(writer: W, traces: &[AnnualTrace]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for trace in traces {
        for kind in SeriesKind::TRACE {
            for (entity, values) in trace.series(kind) {
                for (step, &value) in values.iter().enumerate() {
                    w.serialize(TraceRow {
                        series_kind: kind.as_str().into(),
                        entity_id: entity.clone(),
                        scenario_id: trace.id.clone(),
                        step_index: step,
                        value,
                    })?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes a scenario set in the trace CSV layout. Besides the trace series
/// (step index counted across the representative days) each scenario gets a
/// `probability` row (entity = tag) and one `day_weight` row per day
/// (entity = source day, step index = representative-day index).
pub fn write_scenario_set<W: Write>(writer: W, set: &ScenarioSet) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for s in &set.scenarios {
        w.serialize(TraceRow {
            series_kind: "probability".into(),
            entity_id: s.tag.as_str().into(),
            scenario_id: s.id.clone(),
            step_index: 0,
            value: s.probability,
        })?;
        for (i, d) in s.days.iter().enumerate() {
            w.serialize(TraceRow {
                series_kind: "day_weight".into(),
                entity_id: d.source_day.to_string(),
                scenario_id: s.id.clone(),
                step_index: i,
                value: d.weight as f64,
            })?;
        }
        for kind in SeriesKind::TRACE {
            let entities: Vec<&String> = s.days.first().map(|d| d.series(kind).keys().collect()).unwrap_or_default();
            for entity in entities {
                for (i, d) in s.days.iter().enumerate() {
                    if let Some(v) = d.series(kind).get(entity) {
                        for (t, &value) in v.iter().enumerate() {
                            w.serialize(TraceRow {
                                series_kind: kind.as_str().into(),
                                entity_id: entity.clone(),
                                scenario_id: s.id.clone(),
                                step_index: i * s.steps_per_day + t,
                                value,
                            })?;
                        }
                    }
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Inverse of [`write_scenario_set`].
pub fn read_scenario_set<R: Read>(reader: R, path: &Path) -> Result<ScenarioSet> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut set = ScenarioSet::default();
    for (i, rec) in rdr.deserialize::<TraceRow>().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| Error::Trace {
            file: path.to_path_buf(),
            row,
            message: e.to_string(),
        })?;
        let bad = |m: String| Error::Trace {
            file: path.to_path_buf(),
            row,
            message: m,
        };
        match rec.series_kind.as_str() {
            "probability" => {
                let tag = match rec.entity_id.as_str() {
                    "base" => ScenarioTag::Base,
                    "extreme" => ScenarioTag::Extreme,
                    other => return Err(bad(format!("unknown tag `{other}`"))),
                };
                set.scenarios.push(Scenario {
                    id: rec.scenario_id,
                    probability: rec.value,
                    tag,
                    steps_per_day: STEPS_PER_DAY,
                    days: Vec::new(),
                });
            }
            other => {
                let s = set
                    .scenarios
                    .last_mut()
                    .filter(|s| s.id == rec.scenario_id)
                    .ok_or_else(|| bad("series row before its probability row".into()))?;
                if other == "day_weight" {
                    let source_day = rec.entity_id.parse().map_err(|_| bad("bad source day".into()))?;
                    s.days.push(RepresentativeDay {
                        source_day,
                        weight: rec.value as u32,
                        demand: SeriesMap::new(),
                        availability: SeriesMap::new(),
                        line_availability: SeriesMap::new(),
                        inflow: SeriesMap::new(),
                        variable_cost: SeriesMap::new(),
                    });
                    continue;
                }
                let kind = SeriesKind::parse(other).ok_or_else(|| bad(format!("unknown series_kind `{other}`")))?;
                let spd = s.steps_per_day;
                let (day, t) = (rec.step_index / spd, rec.step_index % spd);
                let d = s.days.get_mut(day).ok_or_else(|| bad(format!("step {} beyond last day", rec.step_index)))?;
                let v = d.series_mut(kind).entry(rec.entity_id).or_default();
                if v.len() != t {
                    return Err(bad(format!("step {} out of order", rec.step_index)));
                }
                v.push(rec.value);
            }
        }
    }
    Ok(set)
}

/// Base weather years from the model's synthetic generator section.
pub fn model_synthetic_traces(model: &SystemModel) -> Result<Vec<AnnualTrace>> {
    let cfg = model
        .scenarios
        .synthetic
        .as_ref()
        .ok_or_else(|| Error::validation("scenarios.synthetic", "no trace file given and no synthetic generator configured"))?;
    Ok(synthetic_traces(cfg))
}

/// Deterministic synthetic weather years for examples and tests.
pub fn synthetic_traces(cfg: &SyntheticTraces) -> Vec<AnnualTrace> {
    use std::f64::consts::PI;
    let spd = STEPS_PER_DAY;
    (0..cfg.base_years)
        .map(|year| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(1_000_003).wrapping_add(year as u64));
            let n = cfg.days * spd;
            let mut trace = AnnualTrace {
                id: format!("base{}", year + 1),
                steps_per_day: spd,
                ..Default::default()
            };
            // shared day-level weather: temperature anomaly, cloudiness, wind
            let mut heat = Vec::with_capacity(cfg.days);
            let mut cloud = Vec::with_capacity(cfg.days);
            let mut wind = Vec::with_capacity(cfg.days);
            let mut w = 0.0f64;
            for _ in 0..cfg.days {
                heat.push(rng.gen::<f64>() * 2.0 - 1.0);
                cloud.push(0.35 + 0.65 * rng.gen::<f64>());
                w = 0.7 * w + 0.3 * (rng.gen::<f64>() * 2.0 - 1.0) * 1.5;
                wind.push(w);
            }
            let season = |d: usize| (2.0 * PI * (d as f64 - 20.0) / cfg.days.max(1) as f64).cos();
            let hour = |t: usize| (t as f64 + 0.5) * 24.0 / spd as f64;
            for dem in &cfg.demand {
                let mut v = Vec::with_capacity(n);
                for d in 0..cfg.days {
                    for t in 0..spd {
                        let h = hour(t);
                        let shape = (-((h - 18.0) / 3.0).powi(2)).exp() + 0.5 * (-((h - 8.5) / 2.0).powi(2)).exp() - 0.35;
                        let x = dem.mean
                            * (1.0 + dem.seasonal_swing * season(d) + dem.daily_swing * shape + dem.noise * heat[d]);
                        v.push(x.max(0.0));
                    }
                }
                trace.demand.insert(dem.node.clone(), v);
            }
            for av in &cfg.availability {
                let mut v = Vec::with_capacity(n);
                for d in 0..cfg.days {
                    for t in 0..spd {
                        let h = hour(t);
                        let x = match av.profile {
                            AvailabilityProfile::Solar => {
                                let sun = if (6.0..18.0).contains(&h) { (PI * (h - 6.0) / 12.0).sin() } else { 0.0 };
                                av.mean * PI * sun * cloud[d] * (1.0 + 0.2 * season(d)) / 1.3
                            }
                            AvailabilityProfile::Wind => av.mean * (1.0 + wind[d] + 0.1 * (2.0 * PI * h / 24.0).cos()),
                        };
                        v.push(x.clamp(0.0, 1.0));
                    }
                }
                trace.availability.insert(av.resource.clone(), v);
            }
            for inf in &cfg.inflow {
                let mut v = Vec::with_capacity(n);
                for d in 0..cfg.days {
                    let day_factor = (1.0 + 0.4 * season(d) + 0.3 * wind[d]).max(0.1);
                    v.extend(std::iter::repeat_n(inf.mean * day_factor, spd));
                }
                trace.inflow.insert(inf.resource.clone(), v);
            }
            trace
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat_trace(days: usize, shape: impl Fn(usize, usize) -> f64) -> AnnualTrace {
        let mut t = AnnualTrace {
            id: "y".into(),
            steps_per_day: STEPS_PER_DAY,
            ..Default::default()
        };
        let v = (0..days * STEPS_PER_DAY).map(|k| shape(k / STEPS_PER_DAY, k % STEPS_PER_DAY)).collect();
        t.demand.insert("n".into(), v);
        t
    }

    #[test]
    fn identical_days_weights_sum_to_day_count() {
        let t = flat_trace(365, |_, _| 50.0);
        let reps = cluster_representative_days(&t, 4, 7).unwrap();
        assert_eq!(reps.len(), 4);
        assert_eq!(reps.iter().map(|r| r.1).sum::<u32>(), 365);
    }

    #[test]
    fn k_equal_to_days_selects_every_day() {
        let t = flat_trace(12, |d, s| 10.0 + d as f64 + (s as f64) * 0.01 * d as f64);
        let reps = cluster_representative_days(&t, 12, 3).unwrap();
        assert_eq!(reps, (0..12).map(|d| (d, 1)).collect::<Vec<_>>());
    }

    #[test]
    fn two_alternating_shapes_split_evenly() {
        // exhaustive oracle: any 2-partition other than the by-shape one has
        // strictly larger within-cluster scatter
        let t = flat_trace(10, |d, s| if d % 2 == 0 { 40.0 + s as f64 } else { 90.0 - s as f64 });
        for seed in 0..10 {
            let reps = cluster_representative_days(&t, 2, seed).unwrap();
            assert_eq!(reps.len(), 2);
            assert_eq!(reps.iter().map(|r| r.1).collect::<Vec<_>>(), vec![5, 5]);
            assert_ne!(reps[0].0 % 2, reps[1].0 % 2);
        }
    }

    #[test]
    fn peak_day_is_kept_as_representative() {
        let t = flat_trace(30, |d, s| 50.0 + (d % 3) as f64 + if d == 17 && s == 36 { 40.0 } else { 0.0 });
        for seed in 0..5 {
            let reps = cluster_representative_days(&t, 3, seed).unwrap();
            assert!(reps.iter().any(|r| r.0 == 17), "{reps:?}");
            assert_eq!(reps.iter().map(|r| r.1).sum::<u32>(), 30);
        }
    }

    #[test]
    fn too_many_clusters_is_an_error() {
        let t = flat_trace(3, |_, _| 1.0);
        assert!(cluster_representative_days(&t, 4, 0).is_err());
    }

    #[test]
    fn probabilities_follow_extreme_mass() {
        let p = base_probability(10, 6, 0.01).unwrap();
        assert!((p - 0.094).abs() < 1e-15);
        assert_eq!(base_probability(1, 0, 0.01).unwrap(), 1.0);
        assert!((base_probability(2, 2, 0.01).unwrap() - 0.49).abs() < 1e-15);
        assert!(base_probability(0, 1, 0.01).is_err());
    }

    fn two_day_scenario(w: (u32, u32)) -> Scenario {
        let t = flat_trace(2, |d, _| d as f64);
        Scenario {
            id: "s".into(),
            probability: 1.0,
            tag: ScenarioTag::Base,
            steps_per_day: STEPS_PER_DAY,
            days: vec![t.day(0, w.0), t.day(1, w.1)],
        }
    }

    #[test]
    fn short_storage_cycles_each_day() {
        let s = two_day_scenario((200, 165));
        let c = storage_linkage_constraints(&s, ResourceKind::Storage, 20.0, 2.0, 12.0);
        assert_eq!(c, vec![LinkageConstraint::Cyclic { day: 0 }, LinkageConstraint::Cyclic { day: 1 }]);
    }

    #[test]
    fn long_storage_chains_with_weighted_closure() {
        let s = two_day_scenario((300, 65));
        let c = storage_linkage_constraints(&s, ResourceKind::Storage, 480.0, 48.0, 12.0);
        let nets = c.iter().filter(|x| matches!(x, LinkageConstraint::NetChange { .. })).count();
        assert_eq!(nets, 2);
        assert!(c.contains(&LinkageConstraint::AnnualClosure { terms: vec![(0, 300.0), (1, 65.0)] }));
        assert!(c.contains(&LinkageConstraint::Chain { day: 0, weight: 300.0 }));
        // hydro is always chained
        let h = storage_linkage_constraints(&s, ResourceKind::Hydro, 100.0, 2.0, 12.0);
        assert!(h.iter().any(|x| matches!(x, LinkageConstraint::AnnualClosure { .. })));
    }

    #[test]
    fn csv_reports_file_and_row() {
        let text = "series_kind,entity_id,scenario_id,step_index,value\ndemand,n,y,0,1\ndemand,n,y,1,oops\n";
        let err = read_traces(text.as_bytes(), Path::new("bad.csv")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.starts_with("bad.csv:3:"), "{msg}");
    }

    #[test]
    fn csv_rejects_gaps() {
        let text = "series_kind,entity_id,scenario_id,step_index,value\ndemand,n,y,0,1\ndemand,n,y,2,1\n";
        let msg = read_traces(text.as_bytes(), Path::new("gap.csv")).unwrap_err().to_string();
        assert!(msg.contains("expected step 1"), "{msg}");
    }
}
