use std::fs;
use std::path::{Path, PathBuf};

use resilience_market::cli::{run_cli, run_pipeline, RunManifest, Stage};
use resilience_market::model::DesignKind;
use resilience_market::scenario::{synthetic_traces, write_traces};
use resilience_market::toy::{toy3_config, TOY3_CONFIG};

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("config.toml");
    fs::write(&p, text).unwrap();
    p
}

fn manifest(config: PathBuf, out: PathBuf, stages: Vec<Stage>) -> RunManifest {
    RunManifest {
        config,
        traces: Vec::new(),
        design: DesignKind::Eom,
        out,
        seed: 7,
        stages,
        threads: Some(2),
    }
}

fn names(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    v.sort();
    v
}

fn args(list: &[&str]) -> Vec<String> {
    std::iter::once("resilience-market").chain(list.iter().copied()).map(String::from).collect()
}

#[test]
fn scenarios_stage_writes_only_scenario_files() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TOY3_CONFIG);
    let out = tmp.path().join("out");
    let res = run_pipeline(&manifest(cfg, out.clone(), vec![Stage::Scenarios])).unwrap();
    assert!(res.equilibrium.is_none());
    assert_eq!(names(&out), vec!["run_summary.toml", "scenario_summary.csv", "scenarios.csv"]);
    let summary = fs::read_to_string(out.join("run_summary.toml")).unwrap();
    assert!(summary.contains("seed = 7"));
    assert!(summary.contains("config_sha256 = "));
    assert!(summary.contains("wall_time_seconds = "));
}

#[test]
fn full_pipeline_writes_every_artefact() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TOY3_CONFIG);
    let out = tmp.path().join("out");
    let code = run_cli(args(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--design", "cm"]));
    assert_eq!(code, 0);
    let files = names(&out);
    for f in [
        "build_status.csv",
        "capacity.csv",
        "dispatch_summary.csv",
        "equilibrium_log.csv",
        "insurance.csv",
        "insurer_scenarios.csv",
        "outage_costs.csv",
        "poe.csv",
        "run_summary.toml",
        "scenario_summary.csv",
        "scenarios.csv",
        "use_curve_system.csv",
        "use_curve_system_insured.csv",
        "use_curves.svg",
    ] {
        assert!(files.iter().any(|x| x == f), "missing {f} in {files:?}");
    }
}

#[test]
fn corrupt_trace_names_file_and_row() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TOY3_CONFIG);
    let traces = synthetic_traces(toy3_config().scenarios.synthetic.as_ref().unwrap());
    let path = tmp.path().join("traces.csv");
    let mut buf = Vec::new();
    write_traces(&mut buf, &traces).unwrap();
    let mut lines: Vec<String> = String::from_utf8(buf).unwrap().lines().map(String::from).collect();
    // line 6 of the file is data row 5
    let mut cells: Vec<String> = lines[5].split(',').map(String::from).collect();
    *cells.last_mut().unwrap() = "not-a-number".into();
    lines[5] = cells.join(",");
    fs::write(&path, lines.join("\n") + "\n").unwrap();

    let mut m = manifest(cfg.clone(), tmp.path().join("out"), vec![Stage::Scenarios]);
    m.traces = vec![path.clone()];
    let err = run_pipeline(&m).err().expect("corrupt data is rejected");
    let msg = err.to_string();
    assert!(msg.contains("traces.csv:6:"), "{msg}");
    assert_eq!(err.exit_code(), 2);

    let code = run_cli(args(&[
        "scenarios",
        "--config",
        cfg.to_str().unwrap(),
        "--traces",
        path.to_str().unwrap(),
        "--out",
        tmp.path().join("o2").to_str().unwrap(),
    ]));
    assert_eq!(code, 2);
}

#[test]
fn trace_file_round_trips_through_the_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TOY3_CONFIG);
    let traces = synthetic_traces(toy3_config().scenarios.synthetic.as_ref().unwrap());
    let path = tmp.path().join("traces.csv");
    write_traces(fs::File::create(&path).unwrap(), &traces).unwrap();

    let synthetic = tmp.path().join("a");
    let from_file = tmp.path().join("b");
    run_pipeline(&manifest(cfg.clone(), synthetic.clone(), vec![Stage::Scenarios])).unwrap();
    let mut m = manifest(cfg, from_file.clone(), vec![Stage::Scenarios]);
    m.traces = vec![path];
    run_pipeline(&m).unwrap();
    assert_eq!(fs::read(synthetic.join("scenarios.csv")).unwrap(), fs::read(from_file.join("scenarios.csv")).unwrap());
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let good = write_config(tmp.path(), TOY3_CONFIG);
    assert_eq!(run_cli(args(&["validate", "--config", good.to_str().unwrap()])), 0);

    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, TOY3_CONFIG.replace("to = \"central\"", "to = \"nowhere\"")).unwrap();
    assert_eq!(run_cli(args(&["validate", "--config", bad.to_str().unwrap()])), 2);
    assert_eq!(run_cli(args(&["validate", "--config", tmp.path().join("missing.toml").to_str().unwrap()])), 2);

    let capped = tmp.path().join("capped.toml");
    fs::write(&capped, TOY3_CONFIG.replace("max_iterations = 100", "max_iterations = 1")).unwrap();
    let code = run_cli(args(&[
        "equilibrium",
        "--config",
        capped.to_str().unwrap(),
        "--out",
        tmp.path().join("o").to_str().unwrap(),
    ]));
    assert_eq!(code, 4);
}

#[test]
fn stage_list_is_normalised() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TOY3_CONFIG);
    let out = tmp.path().join("out");
    let res = run_pipeline(&manifest(cfg, out.clone(), vec![Stage::Insurance, Stage::Scenarios, Stage::Insurance])).unwrap();
    assert!(res.equilibrium.is_some());
    assert!(res.insurance.is_some());
    let files = names(&out);
    assert!(files.contains(&"insurance.csv".to_string()));
    assert!(!files.contains(&"equilibrium_log.csv".to_string()));
    assert!(!files.contains(&"poe.csv".to_string()));
}
