//! Unserved-energy duration curves, probability-of-exceedance readings,
//! outage-cost comparison and the CSV/SVG artefacts built from them.

use std::fmt::Write as _;
use std::io::Write;

use crate::capacity::CapacityOutcome;
use crate::dispatch::DispatchSolution;
use crate::equilibrium::EquilibriumResult;
use crate::error::{Error, Result};
use crate::model::SystemModel;
use crate::scenario::ScenarioSet;

pub const POE_LEVELS: [f64; 4] = [0.90, 0.95, 0.97, 0.99];

const PROB_EPS: f64 = 1e-12;

/// Points `(exceedance probability, value)` ordered by decreasing value,
/// hence increasing exceedance: a point says the value is reached or
/// exceeded with that probability.
#[derive(Debug, Clone, PartialEq)]
pub struct DurationCurve {
    pub points: Vec<(f64, f64)>,
}

impl DurationCurve {
    pub fn from_values(values: &[f64], probs: &[f64]) -> Self {
        let mut pairs: Vec<(f64, f64)> = values.iter().copied().zip(probs.iter().copied()).collect();
        pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
        let mut points: Vec<(f64, f64)> = Vec::new();
        let mut cum = 0.0;
        for (v, p) in pairs {
            cum += p;
            match points.last_mut() {
                Some(last) if last.1 == v => last.0 = cum,
                _ => points.push((cum, v)),
            }
        }
        Self { points }
    }
}

/// Which consumers a curve covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    System,
    Node(usize),
}

fn consumers_in(model: &SystemModel, scope: Scope) -> Vec<usize> {
    match scope {
        Scope::System => (0..model.consumers.len()).collect(),
        Scope::Node(n) => model.consumers_at(n).collect(),
    }
}

/// Annual unserved energy as a percentage of annual demand for one
/// scenario, given shed per consumer.
pub fn use_percent(model: &SystemModel, sol: &DispatchSolution, shed: &[Vec<f64>], scope: Scope) -> f64 {
    let who = consumers_in(model, scope);
    let demand: f64 = who.iter().map(|&d| sol.annual_energy(&sol.demand[d])).sum();
    if demand <= 0.0 {
        return 0.0;
    }
    let lost: f64 = who.iter().map(|&d| sol.annual_energy(&shed[d])).sum();
    (100.0 * lost / demand).clamp(0.0, 100.0)
}

/// Duration curve of the wholesale dispatch's unserved energy.
pub fn use_duration_curve(model: &SystemModel, sols: &[DispatchSolution], scope: Scope) -> DurationCurve {
    let values: Vec<f64> = sols.iter().map(|s| use_percent(model, s, &s.shed, scope)).collect();
    let probs: Vec<f64> = sols.iter().map(|s| s.probability).collect();
    DurationCurve::from_values(&values, &probs)
}

/// Shedding of one scenario after some intervention.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioShed {
    pub scenario_id: String,
    /// [consumer][step].
    pub shed: Vec<Vec<f64>>,
}

/// Pairs residual shedding `[scenario][consumer][step]` with the scenario
/// ids of `sols`.
pub fn label_residuals(sols: &[DispatchSolution], residual: &[Vec<Vec<f64>>]) -> Vec<ScenarioShed> {
    sols.iter()
        .zip(residual)
        .map(|(s, r)| ScenarioShed {
            scenario_id: s.scenario_id.clone(),
            shed: r.clone(),
        })
        .collect()
}

fn matched<'a>(sols: &'a [DispatchSolution], residual: &'a [ScenarioShed]) -> Result<Vec<(&'a DispatchSolution, &'a ScenarioShed)>> {
    if sols.len() != residual.len() {
        return Err(Error::validation("report", "scenario counts differ"));
    }
    sols.iter()
        .zip(residual)
        .map(|(s, r)| {
            if s.scenario_id == r.scenario_id {
                Ok((s, r))
            } else {
                Err(Error::validation(
                    "report",
                    format!("scenario `{}` paired with `{}`", s.scenario_id, r.scenario_id),
                ))
            }
        })
        .collect()
}

/// Duration curve of shedding left after an intervention.
pub fn residual_duration_curve(
    model: &SystemModel,
    sols: &[DispatchSolution],
    residual: &[ScenarioShed],
    scope: Scope,
) -> Result<DurationCurve> {
    let pairs = matched(sols, residual)?;
    let values: Vec<f64> = pairs.iter().map(|(s, r)| use_percent(model, s, &r.shed, scope)).collect();
    let probs: Vec<f64> = pairs.iter().map(|(s, _)| s.probability).collect();
    Ok(DurationCurve::from_values(&values, &probs))
}

/// Value at the smallest tabulated exceedance probability that is at least
/// `1 - level` (step interpolation).
pub fn poe_value(curve: &DurationCurve, level: f64) -> f64 {
    let target = 1.0 - level;
    curve
        .points
        .iter()
        .find(|p| p.0 >= target - PROB_EPS)
        .or(curve.points.last())
        .map_or(0.0, |p| p.1)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutageCostRow {
    pub poe_level: f64,
    /// Annual lost-load cost at VOLL, $.
    pub without_insurance: f64,
    pub with_insurance: f64,
    pub reduction: f64,
    pub premium: f64,
}

fn lost_load_cost(model: &SystemModel, sol: &DispatchSolution, shed: &[Vec<f64>]) -> f64 {
    model
        .consumers
        .iter()
        .enumerate()
        .map(|(d, c)| c.voll * sol.annual_energy(&shed[d]))
        .sum()
}

/// Lost-load cost without and with insurance at each POE level.
pub fn outage_cost_comparison(
    model: &SystemModel,
    sols: &[DispatchSolution],
    residual: &[ScenarioShed],
    premium: f64,
) -> Result<Vec<OutageCostRow>> {
    let pairs = matched(sols, residual)?;
    let probs: Vec<f64> = pairs.iter().map(|(s, _)| s.probability).collect();
    let before: Vec<f64> = pairs.iter().map(|(s, _)| lost_load_cost(model, s, &s.shed)).collect();
    let after: Vec<f64> = pairs.iter().map(|(s, r)| lost_load_cost(model, s, &r.shed)).collect();
    let (cb, ca) = (DurationCurve::from_values(&before, &probs), DurationCurve::from_values(&after, &probs));
    Ok(POE_LEVELS
        .iter()
        .map(|&level| {
            let (b, a) = (poe_value(&cb, level), poe_value(&ca, level));
            OutageCostRow {
                poe_level: level,
                without_insurance: b,
                with_insurance: a,
                reduction: b - a,
                premium,
            }
        })
        .collect())
}

fn f6(x: f64) -> String {
    // avoid "-0.000000" so outputs compare cleanly
    let s = format!("{x:.6}");
    if s.trim_start_matches('-').chars().all(|c| c == '0' || c == '.') {
        "0.000000".into()
    } else {
        s
    }
}

pub fn write_curve_csv<W: Write>(writer: W, curve: &DurationCurve) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["exceedance_probability", "use_percent"])?;
    for &(p, v) in &curve.points {
        w.write_record([f6(p), f6(v)])?;
    }
    w.flush()?;
    Ok(())
}

/// POE readings of several labelled curves.
pub fn write_poe_csv<W: Write>(writer: W, curves: &[(&str, &DurationCurve)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["curve", "poe_level", "use_percent"])?;
    for (name, c) in curves {
        for level in POE_LEVELS {
            w.write_record([name.to_string(), f6(level), f6(poe_value(c, level))])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_outage_costs_csv<W: Write>(writer: W, rows: &[OutageCostRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["poe_level", "without_insurance", "with_insurance", "reduction", "premium"])?;
    for r in rows {
        w.write_record([f6(r.poe_level), f6(r.without_insurance), f6(r.with_insurance), f6(r.reduction), f6(r.premium)])?;
    }
    w.flush()?;
    Ok(())
}

/// Final build status with capacity and utility per resource.
pub fn write_build_status_csv<W: Write>(writer: W, model: &SystemModel, result: &EquilibriumResult) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["resource", "node", "kind", "capacity_mw", "initially_built", "built", "utility"])?;
    for (r, res) in model.resources.iter().enumerate() {
        w.write_record([
            res.id.clone(),
            res.node.clone(),
            res.kind.as_str().to_string(),
            f6(res.capacity),
            (res.built as u8).to_string(),
            (result.build_status[r] as u8).to_string(),
            f6(result.utilities[r]),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One row per scenario: cost, energy, shedding and prices.
pub fn write_dispatch_summary_csv<W: Write>(writer: W, model: &SystemModel, sols: &[DispatchSolution]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "scenario",
        "probability",
        "dispatch_cost",
        "demand_mwh",
        "shed_mwh",
        "use_percent",
        "mean_energy_price",
        "max_energy_price",
        "mean_reserve_price",
    ])?;
    for s in sols {
        let hours: f64 = (0..s.num_steps()).map(|k| s.step_weight(k)).sum();
        let n = s.energy_price.len().max(1) as f64;
        let mean_price = s.energy_price.iter().map(|p| s.annual_energy(p)).sum::<f64>() / (hours * n);
        let max_price = s.energy_price.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean_reserve = s.annual_energy(&s.reserve_price) / hours;
        w.write_record([
            s.scenario_id.clone(),
            f6(s.probability),
            f6(s.objective),
            f6(s.annual_demand()),
            f6(s.annual_shed()),
            f6(use_percent(model, s, &s.shed, Scope::System)),
            f6(mean_price),
            f6(if max_price.is_finite() { max_price } else { 0.0 }),
            f6(mean_reserve),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_capacity_csv<W: Write>(writer: W, model: &SystemModel, outcome: &CapacityOutcome) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["resource", "cleared_mw", "price"])?;
    for (res, &c) in model.resources.iter().zip(&outcome.cleared) {
        w.write_record([res.id.clone(), f6(c), f6(outcome.price)])?;
    }
    for (j, &s) in outcome.shortage.iter().enumerate() {
        w.write_record([format!("shortage_segment_{}", j + 1), f6(s), f6(outcome.price)])?;
    }
    w.flush()?;
    Ok(())
}

/// Scenario probabilities and representative-day weights.
pub fn write_scenario_summary_csv<W: Write>(writer: W, set: &ScenarioSet) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["scenario", "tag", "probability", "day", "source_day", "weight", "peak_demand_mw"])?;
    for s in &set.scenarios {
        for (i, d) in s.days.iter().enumerate() {
            w.write_record([
                s.id.clone(),
                s.tag.as_str().to_string(),
                format!("{:.12}", s.probability),
                i.to_string(),
                d.source_day.to_string(),
                d.weight.to_string(),
                f6(d.peak_system_demand()),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Step plot of one or more duration curves as a standalone SVG.
pub fn curves_svg(title: &str, curves: &[(&str, &DurationCurve)]) -> String {
    const W: f64 = 480.0;
    const H: f64 = 320.0;
    const M: f64 = 40.0;
    let colours = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];
    let ymax = curves
        .iter()
        .flat_map(|(_, c)| c.points.iter().map(|p| p.1))
        .fold(0.0, f64::max)
        .max(1e-9);
    let x = |p: f64| M + p * (W - 2.0 * M);
    let y = |v: f64| H - M - v / ymax * (H - 2.0 * M);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(s, r#"<text x="{M}" y="20">{title}</text>"#);
    let _ = writeln!(s, r#"<line x1="{M}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, H - M, W - M, H - M);
    let _ = writeln!(s, r#"<line x1="{M}" y1="{M}" x2="{M}" y2="{}" stroke="black"/>"#, H - M);
    let _ = writeln!(s, r#"<text x="{}" y="{}">exceedance probability</text>"#, W / 2.0 - 50.0, H - 8.0);
    let _ = writeln!(s, r#"<text x="4" y="{}">{ymax:.3}%</text>"#, M);
    for (i, (name, c)) in curves.iter().enumerate() {
        let mut pts = Vec::new();
        let mut prev = 0.0;
        for &(p, v) in &c.points {
            pts.push(format!("{:.2},{:.2}", x(prev), y(v)));
            pts.push(format!("{:.2},{:.2}", x(p), y(v)));
            prev = p;
        }
        let colour = colours[i % colours.len()];
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{colour}" stroke-width="2" points="{}"/>"#, pts.join(" "));
        let _ = writeln!(s, r#"<text x="{}" y="{}" fill="{colour}">{name}</text>"#, W - M - 90.0, M + 14.0 * i as f64);
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_scenario_curve_and_poe() {
        let c = DurationCurve::from_values(&[0.0, 1.0], &[0.5, 0.5]);
        assert_eq!(c.points, vec![(0.5, 1.0), (1.0, 0.0)]);
        assert_eq!(poe_value(&c, 0.95), 1.0);
        assert_eq!(poe_value(&c, 0.5), 1.0);
        assert_eq!(poe_value(&c, 0.0), 0.0);
    }

    #[test]
    fn flat_and_single_curves() {
        let flat = DurationCurve::from_values(&[0.0, 0.0, 0.0], &[0.2, 0.3, 0.5]);
        assert_eq!(flat.points.len(), 1);
        assert!((flat.points[0].0 - 1.0).abs() < 1e-12);
        for level in POE_LEVELS {
            assert_eq!(poe_value(&flat, level), 0.0);
        }
        let one = DurationCurve::from_values(&[3.5], &[1.0]);
        assert_eq!(one.points, vec![(1.0, 3.5)]);
    }

    #[test]
    fn poe_is_monotone_in_level() {
        let c = DurationCurve::from_values(&[0.0, 0.2, 5.0, 1.0], &[0.47, 0.47, 0.01, 0.05]);
        let vals: Vec<f64> = POE_LEVELS.iter().map(|&l| poe_value(&c, l)).collect();
        assert!(vals.windows(2).all(|w| w[0] <= w[1]), "{vals:?}");
        assert_eq!(poe_value(&c, 0.99), 5.0);
    }
}
