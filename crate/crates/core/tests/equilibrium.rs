mod common;

use common::{close, day, model, scenario, single};
use resilience_market::equilibrium::*;
use resilience_market::model::{DesignKind, SystemModel};
use resilience_market::scenario::ScenarioSet;
use resilience_market::Error;

const PEAK_STEPS: [usize; 2] = [36, 37];
const SUN: std::ops::Range<usize> = 14..35;
const SHED_COST: f64 = 1000.0;
const STEP_WEIGHT: f64 = 365.0 * 0.5;

fn system(resources: &str) -> SystemModel {
    model(&format!(
        r#"
        [[nodes]]
        id = "n"
        [[consumers]]
        id = "c"
        node = "n"
        voll = {SHED_COST}
        [market_design.eom]
        price_cap = {SHED_COST}
        [risk]
        beta = 0.0
        alpha = 1.0
        {resources}
        "#
    ))
}

fn gen(id: &str, cap: f64, vc: f64, invest: f64, built: bool, queue: Option<u32>) -> String {
    let queue = queue.map_or(String::new(), |q| format!("queue_position = {q}"));
    format!(
        r#"
        [[resources]]
        id = "{id}"
        node = "n"
        kind = "thermal-gen"
        capacity = {cap}
        variable_cost = {vc}
        invest_cost = {invest}
        built = {built}
        retirable = true
        {queue}
        "#
    )
}

fn solar(id: &str, cap: f64, invest: f64, queue: u32) -> String {
    format!(
        r#"
        [[resources]]
        id = "{id}"
        node = "n"
        kind = "vre-gen"
        capacity = {cap}
        invest_cost = {invest}
        retirable = true
        queue_position = {queue}
        "#
    )
}

fn demand() -> Vec<f64> {
    (0..48).map(|t| if PEAK_STEPS.contains(&t) { 130.0 } else { 100.0 }).collect()
}

fn sun() -> Vec<f64> {
    (0..48).map(|t| if SUN.contains(&t) { 0.5 } else { 0.0 }).collect()
}

fn one_day(model: &SystemModel) -> ScenarioSet {
    let mut d = day(365, &[("n", demand())]);
    for r in &model.resources {
        if r.kind == resilience_market::model::ResourceKind::VreGen {
            d.availability.insert(r.id.clone(), sun());
        }
    }
    single(scenario("s", 1.0, vec![d]))
}

/// Merit-order utilities on the single bus: each step's price is the cost
/// of the marginal unit, or the shedding cost when supply runs short.
fn oracle_utilities(model: &SystemModel, mix: &[bool]) -> Vec<f64> {
    let dem = demand();
    let avail: Vec<Vec<f64>> = model
        .resources
        .iter()
        .map(|r| match r.kind {
            resilience_market::model::ResourceKind::VreGen => sun().iter().map(|a| a * r.capacity).collect(),
            _ => vec![r.capacity; 48],
        })
        .collect();
    let mut profit = vec![0.0; mix.len()];
    for t in 0..48 {
        let mut order: Vec<usize> = (0..mix.len()).filter(|&r| mix[r]).collect();
        order.sort_by(|&a, &b| model.resources[a].variable_cost.total_cmp(&model.resources[b].variable_cost));
        let total: f64 = order.iter().map(|&r| avail[r][t]).sum();
        let mut left = dem[t];
        let mut price = SHED_COST;
        let mut output = vec![0.0; mix.len()];
        for &r in &order {
            let g = avail[r][t].min(left);
            output[r] = g;
            left -= g;
            if left <= 0.0 && total > dem[t] {
                price = model.resources[r].variable_cost;
                break;
            }
        }
        for r in 0..mix.len() {
            profit[r] += STEP_WEIGHT * (price - model.resources[r].variable_cost) * output[r];
        }
    }
    (0..mix.len())
        .map(|r| if mix[r] { profit[r] - model.resources[r].invest_cost * model.resources[r].capacity } else { 0.0 })
        .collect()
}

fn coal_gas_solar() -> SystemModel {
    system(&[
        gen("coal", 120.0, 30.0, 400_000.0, true, None),
        gen("gas", 120.0, 50.0, 200_000.0, false, Some(1)),
        solar("solar", 50.0, 150_000.0, 2),
    ]
    .concat())
}

fn all_mixes(n: usize) -> impl Iterator<Item = Vec<bool>> {
    (0..1u32 << n).map(move |bits| (0..n).map(|i| bits >> i & 1 == 1).collect())
}

fn built(model: &SystemModel, mix: &[bool]) -> Vec<String> {
    model.resources.iter().zip(mix).filter(|(_, &b)| b).map(|(r, _)| r.id.clone()).collect()
}

#[test]
fn evaluator_matches_merit_order_on_every_mix() {
    let m = coal_gas_solar();
    let set = one_day(&m);
    let design = m.design(DesignKind::Eom);
    let mut eval = Evaluator::new(&m, &design, &set);
    for mix in all_mixes(3) {
        let got = eval.utilities(&mix).unwrap().to_vec();
        let want = oracle_utilities(&m, &mix);
        for r in 0..3 {
            assert!(close(got[r], want[r], 1e-6), "{mix:?} r{r}: {} vs {}", got[r], want[r]);
        }
    }
    assert_eq!(eval.evaluations(), 8);
}

#[test]
fn retire_then_invest_reaches_gas_only() {
    let m = coal_gas_solar();
    let set = one_day(&m);
    let res = find_market_equilibrium(&m, &m.design(DesignKind::Eom), &set).unwrap();
    assert_eq!(built(&m, &res.build_status), vec!["gas"]);
    let actions: Vec<(Phase, &str, Action)> = res.log.iter().map(|e| (e.phase, e.resource.as_str(), e.action)).collect();
    assert_eq!(
        &actions[..3],
        &[
            (Phase::Retirement, "coal", Action::Retire),
            (Phase::Investment, "gas", Action::Build),
            (Phase::Investment, "solar", Action::Reject),
        ]
    );
    assert_eq!(res.iterations, 2);

    // logged utilities are the ones at the prices of the moment
    let coal_alone = oracle_utilities(&m, &[true, false, false])[0];
    assert!(close(res.log[0].utility, coal_alone, 1e-6));
    assert!(close(res.log[1].utility, oracle_utilities(&m, &[false, true, false])[1], 1e-6));

    // exhaustive check of the no-deviation property at the reached mix
    let table: Vec<(Vec<bool>, Vec<f64>)> = all_mixes(3).map(|mix| {
        let u = oracle_utilities(&m, &mix);
        (mix, u)
    }).collect();
    let lookup = |mix: &[bool]| table.iter().find(|(x, _)| x == mix).unwrap().1.clone();
    let here = lookup(&res.build_status);
    for (r, res_r) in m.resources.iter().enumerate() {
        let mut flipped = res.build_status.clone();
        flipped[r] = !flipped[r];
        let may = if res.build_status[r] { res_r.retirable } else { res_r.queue_position.is_some() };
        if !may {
            continue;
        }
        let after = lookup(&flipped)[r];
        assert!(after <= here[r] + deviation_tolerance(&m, r), "{} gains by flipping", res_r.id);
    }
    let report = check_no_unilateral_deviation(&m, &m.design(DesignKind::Eom), &set, &res.build_status).unwrap();
    assert!(report.is_empty(), "{report:?}");
}

#[test]
fn retiring_the_worse_unit_rescues_the_other() {
    let m = system(&[
        gen("a", 120.0, 30.0, 300_000.0, true, None),
        gen("b", 120.0, 40.0, 250_000.0, true, None),
    ]
    .concat());
    let set = one_day(&m);
    let u = oracle_utilities(&m, &[true, true]);
    assert!(u[0] < u[1] && u[1] < 0.0);
    assert!(oracle_utilities(&m, &[false, true])[1] > 0.0);

    let design = m.design(DesignKind::Eom);
    let mut eval = Evaluator::new(&m, &design, &set);
    let mut mix = m.build_status();
    let mut log = Vec::new();
    assert!(retirement_pass(&mut eval, &m, &mut mix, 1, &mut log).unwrap());
    assert_eq!(mix, vec![false, true]);
    assert_eq!(log.len(), 1);
    assert_eq!(log[0].resource, "a");
}

#[test]
fn equal_utilities_retire_the_lowest_id() {
    let m = system(&[
        gen("u2", 120.0, 30.0, 300_000.0, true, None),
        gen("u1", 120.0, 30.0, 300_000.0, true, None),
    ]
    .concat());
    let set = one_day(&m);
    let design = m.design(DesignKind::Eom);
    let mut eval = Evaluator::new(&m, &design, &set);
    let mut mix = m.build_status();
    let mut log = Vec::new();
    retirement_pass(&mut eval, &m, &mut mix, 1, &mut log).unwrap();
    assert_eq!(log[0].resource, "u1");
    assert_eq!(mix, vec![true, false]);
}

#[test]
fn viable_fleet_is_left_alone() {
    let m = system(&gen("gas", 120.0, 50.0, 200_000.0, true, None));
    let set = one_day(&m);
    let design = m.design(DesignKind::Eom);
    let mut eval = Evaluator::new(&m, &design, &set);
    let mut mix = m.build_status();
    let mut log = Vec::new();
    assert!(!retirement_pass(&mut eval, &m, &mut mix, 1, &mut log).unwrap());
    assert!(!investment_pass(&mut eval, &m, &mut mix, 1, &mut log).unwrap());
    assert!(log.is_empty());
    assert_eq!(mix, vec![true]);

    let res = find_market_equilibrium(&m, &design, &set).unwrap();
    assert_eq!(res.iterations, 1);
    assert!(check_no_unilateral_deviation(&m, &design, &set, &res.build_status).unwrap().is_empty());
}

#[test]
fn queue_order_decides_between_identical_candidates() {
    let m = system(&[
        gen("g_late", 120.0, 50.0, 200_000.0, false, Some(2)),
        gen("g_early", 120.0, 50.0, 200_000.0, false, Some(1)),
    ]
    .concat());
    let set = one_day(&m);
    assert!(oracle_utilities(&m, &[true, true])[0] < 0.0);
    let res = find_market_equilibrium(&m, &m.design(DesignKind::Eom), &set).unwrap();
    assert_eq!(built(&m, &res.build_status), vec!["g_early"]);
    assert_eq!(res.log[0].resource, "g_early");
    assert_eq!(res.log[0].action, Action::Build);
    assert_eq!(res.log[1].action, Action::Reject);
}

#[test]
fn empty_fleet_builds_the_profitable_candidate() {
    let m = system(&gen("gas", 120.0, 50.0, 200_000.0, false, Some(1)));
    let set = one_day(&m);
    let design = m.design(DesignKind::Eom);
    let report = check_no_unilateral_deviation(&m, &design, &set, &[false]).unwrap();
    assert_eq!(report.len(), 1);
    assert_eq!(report[0].resource, "gas");
    assert!(report[0].built);

    let res = find_market_equilibrium(&m, &design, &set).unwrap();
    assert_eq!(res.build_status, vec![true]);
    assert!(close(res.utilities[0], oracle_utilities(&m, &[true])[0], 1e-6));
}

#[test]
fn log_replays_to_the_final_mix_and_is_deterministic() {
    let m = coal_gas_solar();
    let set = one_day(&m);
    let design = m.design(DesignKind::Eom);
    let a = find_market_equilibrium(&m, &design, &set).unwrap();
    let b = find_market_equilibrium(&m, &design, &set).unwrap();
    assert_eq!(a.log, b.log);
    assert_eq!(replay_log(&m, &m.build_status(), &a.log), a.build_status);

    let mut buf = Vec::new();
    write_log_csv(&mut buf, &a.log).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("iteration,loop,resource,action,utility\n1,retirement,coal,retire,"));
}

#[test]
fn iteration_cap_is_an_error_with_the_trace() {
    let mut cfg = coal_gas_solar().to_config();
    cfg.equilibrium.max_iterations = 1;
    let m = resilience_market::model::validate_system(cfg).unwrap();
    let set = one_day(&m);
    match find_market_equilibrium(&m, &m.design(DesignKind::Eom), &set) {
        Err(Error::IterationCap { iterations, trace }) => {
            assert_eq!(iterations, 1);
            assert!(trace.contains("{gas}"), "{trace}");
        }
        other => panic!("expected the cap, got {other:?}"),
    }
}
