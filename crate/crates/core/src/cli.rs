//! Batch front end: argument parsing, the staged pipeline and artefact
//! emission.
//!
//! Every artefact except `run_summary.toml` is a pure function of the config,
//! the trace data and the seed.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::equilibrium::{find_market_equilibrium, write_log_csv, EquilibriumResult};
use crate::error::{Error, Result};
use crate::insurance::{run_insurance, write_insurance_csv, InsuranceOutcome};
use crate::model::{validate_system, DesignKind, SystemConfig, SystemModel};
use crate::report::{
    curves_svg, label_residuals, outage_cost_comparison, residual_duration_curve, use_duration_curve,
    write_build_status_csv, write_capacity_csv, write_curve_csv, write_dispatch_summary_csv, write_outage_costs_csv,
    write_poe_csv, write_scenario_summary_csv, DurationCurve, Scope,
};
use crate::scenario::{build_scenario_set, model_synthetic_traces, read_traces_csv, write_scenario_set, AnnualTrace, ScenarioSet};

pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Scenarios,
    Equilibrium,
    Insurance,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Scenarios, Stage::Equilibrium, Stage::Insurance, Stage::Report];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Scenarios => "scenarios",
            Stage::Equilibrium => "equilibrium",
            Stage::Insurance => "insurance",
            Stage::Report => "report",
        }
    }
}

/// Where a pipeline failure happened.
#[derive(Debug, Error)]
#[error("[{stage}] {source}")]
pub struct StageError {
    pub stage: &'static str,
    #[source]
    pub source: Error,
}

impl StageError {
    /// 2 for bad input, 3 for solver failures, 4 when the equilibrium search
    /// hits its iteration cap.
    pub fn exit_code(&self) -> i32 {
        match self.source {
            Error::Solver(_) => 3,
            Error::IterationCap { .. } => 4,
            _ => 2,
        }
    }
}

fn at<T>(stage: &'static str, r: Result<T>) -> std::result::Result<T, StageError> {
    r.map_err(|source| StageError { stage, source })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub config: PathBuf,
    /// Trace CSVs; the config's synthetic generator is used when empty.
    pub traces: Vec<PathBuf>,
    pub design: DesignKind,
    pub out: PathBuf,
    pub seed: u64,
    /// Stages whose artefacts are written, in pipeline order. Earlier stages
    /// are still computed when a later one needs them.
    pub stages: Vec<Stage>,
    pub threads: Option<usize>,
}

impl RunManifest {
    pub fn validate(&mut self) -> Result<()> {
        if !self.config.is_file() {
            return Err(Error::validation("config", format!("{} does not exist", self.config.display())));
        }
        for t in &self.traces {
            if !t.is_file() {
                return Err(Error::validation("traces", format!("{} does not exist", t.display())));
            }
        }
        if self.stages.is_empty() {
            return Err(Error::validation("stages", "no stage requested"));
        }
        self.stages.sort();
        self.stages.dedup();
        if self.threads == Some(0) {
            return Err(Error::validation("threads", "must be >= 1"));
        }
        Ok(())
    }

    fn wants(&self, stage: Stage) -> bool {
        self.stages.contains(&stage)
    }

    fn last_stage(&self) -> Stage {
        *self.stages.last().expect("validated manifest has a stage")
    }
}

/// Model and base traces loaded from disk.
pub struct Inputs {
    pub model: SystemModel,
    pub traces: Vec<AnnualTrace>,
    pub config_sha256: String,
}

pub fn load_inputs(config: &Path, traces: &[PathBuf]) -> Result<Inputs> {
    let text = std::fs::read_to_string(config)?;
    let config_sha256 = format!("{:x}", Sha256::digest(text.as_bytes()));
    let model = validate_system(SystemConfig::from_toml(&text)?)?;
    let traces = if traces.is_empty() {
        model_synthetic_traces(&model)?
    } else {
        let mut all = Vec::new();
        for p in traces {
            all.extend(read_traces_csv(p)?);
        }
        all
    };
    Ok(Inputs {
        model,
        traces,
        config_sha256,
    })
}

/// What a pipeline run produced.
pub struct RunOutcome {
    pub scenarios: ScenarioSet,
    pub equilibrium: Option<EquilibriumResult>,
    pub insurance: Option<InsuranceOutcome>,
    pub files: Vec<PathBuf>,
}

struct Artefacts<'a> {
    dir: &'a Path,
    files: Vec<PathBuf>,
}

impl Artefacts<'_> {
    fn write(&mut self, name: &str, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
        let path = self.dir.join(name);
        let mut w = BufWriter::new(File::create(&path)?);
        f(&mut w)?;
        w.flush()?;
        self.files.push(path);
        Ok(())
    }
}

#[derive(Serialize)]
struct RunSummary<'a> {
    version: &'a str,
    seed: u64,
    config: String,
    config_sha256: &'a str,
    design: &'a str,
    stages: Vec<&'a str>,
    threads: usize,
    wall_time_seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    equilibrium_iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    breakeven_premium: Option<f64>,
    files: Vec<String>,
}

/// Runs the requested stages inside a pool of `manifest.threads` workers.
pub fn run_pipeline(manifest: &RunManifest) -> std::result::Result<RunOutcome, StageError> {
    let mut manifest = manifest.clone();
    at("manifest", manifest.validate())?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = manifest.threads {
        builder = builder.num_threads(n);
    }
    let pool = at("manifest", builder.build().map_err(|e| Error::validation("threads", e.to_string())))?;
    pool.install(|| run_stages(&manifest))
}

fn run_stages(m: &RunManifest) -> std::result::Result<RunOutcome, StageError> {
    let start = Instant::now();
    let inputs = at("validate", load_inputs(&m.config, &m.traces))?;
    let model = &inputs.model;
    at("output", std::fs::create_dir_all(&m.out).map_err(Error::from))?;
    let mut art = Artefacts {
        dir: &m.out,
        files: Vec::new(),
    };

    let set = at("scenarios", build_scenario_set(model, &inputs.traces, m.seed))?;
    if m.wants(Stage::Scenarios) {
        at("scenarios", art.write("scenarios.csv", |w| write_scenario_set(w, &set)))?;
        at("scenarios", art.write("scenario_summary.csv", |w| write_scenario_summary_csv(w, &set)))?;
    }

    let last = m.last_stage();
    let mut equilibrium = None;
    if last >= Stage::Equilibrium {
        let design = model.design(m.design);
        let res = at("equilibrium", find_market_equilibrium(model, &design, &set))?;
        if m.wants(Stage::Equilibrium) {
            at("equilibrium", write_equilibrium(&mut art, model, &res))?;
        }
        equilibrium = Some(res);
    }

    let mut insurance = None;
    let has_insurance = model.insurance.as_ref().is_some_and(|i| !i.catalog.is_empty());
    if last >= Stage::Insurance {
        if !has_insurance && m.wants(Stage::Insurance) {
            return Err(StageError {
                stage: "insurance",
                source: Error::validation("insurance", "stage requested but the config has no insurance catalog"),
            });
        }
        if has_insurance {
            let res = equilibrium.as_ref().expect("equilibrium runs before insurance");
            let out = at("insurance", run_insurance(model, &set, &res.solutions))?;
            if m.wants(Stage::Insurance) {
                at("insurance", art.write("insurance.csv", |w| write_insurance_csv(w, model, &out)))?;
                at("insurance", art.write("insurer_scenarios.csv", |w| write_insurer_scenarios(w, &set, &out)))?;
            }
            insurance = Some(out);
        }
    }

    if m.wants(Stage::Report) {
        let res = equilibrium.as_ref().expect("equilibrium runs before report");
        at("report", write_report(&mut art, model, res, insurance.as_ref()))?;
    }

    let summary = RunSummary {
        version: env!("CARGO_PKG_VERSION"),
        seed: m.seed,
        config: m.config.display().to_string(),
        config_sha256: &inputs.config_sha256,
        design: m.design.as_str(),
        stages: m.stages.iter().map(|s| s.as_str()).collect(),
        threads: rayon::current_num_threads(),
        wall_time_seconds: start.elapsed().as_secs_f64(),
        equilibrium_iterations: equilibrium.as_ref().map(|e| e.iterations),
        breakeven_premium: insurance.as_ref().map(|i| i.breakeven_premium),
        files: art
            .files
            .iter()
            .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
            .collect(),
    };
    let text = toml::to_string(&summary).expect("summary serialises");
    at("output", std::fs::write(m.out.join("run_summary.toml"), text).map_err(Error::from))?;
    art.files.push(m.out.join("run_summary.toml"));

    Ok(RunOutcome {
        scenarios: set,
        equilibrium,
        insurance,
        files: art.files,
    })
}

fn write_equilibrium(art: &mut Artefacts<'_>, model: &SystemModel, res: &EquilibriumResult) -> Result<()> {
    art.write("equilibrium_log.csv", |w| write_log_csv(w, &res.log))?;
    art.write("build_status.csv", |w| write_build_status_csv(w, model, res))?;
    art.write("dispatch_summary.csv", |w| write_dispatch_summary_csv(w, model, &res.solutions))?;
    if let Some(cap) = &res.capacity {
        art.write("capacity.csv", |w| write_capacity_csv(w, model, cap))?;
    }
    Ok(())
}

fn write_insurer_scenarios<W: Write>(writer: W, set: &ScenarioSet, out: &InsuranceOutcome) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["scenario", "probability", "profit", "compensation"])?;
    for (i, s) in set.scenarios.iter().enumerate() {
        w.write_record([
            s.id.clone(),
            format!("{:.12}", s.probability),
            format!("{:.6}", out.insurer.profits[i]),
            format!("{:.6}", out.insurer.compensation[i]),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_report(
    art: &mut Artefacts<'_>,
    model: &SystemModel,
    res: &EquilibriumResult,
    insurance: Option<&InsuranceOutcome>,
) -> Result<()> {
    let sols = &res.solutions;
    let residual = insurance.map(|i| label_residuals(sols, &i.residual_shed));
    let mut scopes = vec![("system".to_string(), Scope::System)];
    for (n, node) in model.nodes.iter().enumerate() {
        if model.consumers_at(n).next().is_some() {
            scopes.push((node.id.clone(), Scope::Node(n)));
        }
    }
    let mut curves: Vec<(String, DurationCurve)> = Vec::new();
    for (name, scope) in &scopes {
        let base = use_duration_curve(model, sols, *scope);
        art.write(&format!("use_curve_{name}.csv"), |w| write_curve_csv(w, &base))?;
        curves.push((name.clone(), base));
        if let Some(r) = &residual {
            let insured = residual_duration_curve(model, sols, r, *scope)?;
            art.write(&format!("use_curve_{name}_insured.csv"), |w| write_curve_csv(w, &insured))?;
            curves.push((format!("{name}_insured"), insured));
        }
    }
    let labelled: Vec<(&str, &DurationCurve)> = curves.iter().map(|(n, c)| (n.as_str(), c)).collect();
    art.write("poe.csv", |w| write_poe_csv(w, &labelled))?;
    if let (Some(r), Some(ins)) = (&residual, insurance) {
        let rows = outage_cost_comparison(model, sols, r, ins.breakeven_premium)?;
        art.write("outage_costs.csv", |w| write_outage_costs_csv(w, &rows))?;
    }
    let system: Vec<(&str, &DurationCurve)> = labelled.iter().filter(|(n, _)| n.starts_with("system")).copied().collect();
    art.write("use_curves.svg", |w| Ok(w.write_all(curves_svg("System unserved energy (% of demand)", &system).as_bytes())?))?;
    Ok(())
}

#[derive(Debug, Parser)]
#[command(name = "resilience-market", version, about = "Market equilibrium and outage insurance simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a config (and trace files) without solving anything.
    Validate(InputArgs),
    /// Build the scenario set.
    Scenarios(RunArgs),
    /// Scenarios, then the market equilibrium.
    Equilibrium(RunArgs),
    /// Scenarios, equilibrium, then the insurer and consumer problems.
    Insurance(RunArgs),
    /// Everything, plus duration curves and outage-cost tables.
    Report(RunArgs),
    /// Chosen stages (all by default).
    Run {
        #[command(flatten)]
        args: RunArgs,
        #[arg(long, value_delimiter = ',')]
        stages: Vec<Stage>,
    },
}

#[derive(Debug, Args)]
pub struct InputArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Trace CSV; repeat for several files. Defaults to the synthetic
    /// generator in the config.
    #[arg(long)]
    pub traces: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long, default_value = "eom")]
    pub design: DesignArg,
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DesignArg {
    Eom,
    Ordc,
    Cm,
}

impl From<DesignArg> for DesignKind {
    fn from(d: DesignArg) -> Self {
        match d {
            DesignArg::Eom => DesignKind::Eom,
            DesignArg::Ordc => DesignKind::Ordc,
            DesignArg::Cm => DesignKind::Cm,
        }
    }
}

fn manifest(args: RunArgs, stages: Vec<Stage>) -> RunManifest {
    RunManifest {
        config: args.input.config,
        traces: args.input.traces,
        design: args.design.into(),
        out: args.out,
        seed: args.seed,
        stages,
        threads: args.threads,
    }
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let m = match cli.command {
        Command::Validate(input) => {
            return match load_inputs(&input.config, &input.traces) {
                Ok(i) => {
                    println!(
                        "ok: {} nodes, {} lines, {} resources, {} consumers, {} base years",
                        i.model.nodes.len(),
                        i.model.lines.len(),
                        i.model.resources.len(),
                        i.model.consumers.len(),
                        i.traces.len()
                    );
                    0
                }
                Err(e) => {
                    let e = StageError { stage: "validate", source: e };
                    eprintln!("error {e}");
                    e.exit_code()
                }
            };
        }
        Command::Scenarios(a) => manifest(a, vec![Stage::Scenarios]),
        Command::Equilibrium(a) => manifest(a, vec![Stage::Scenarios, Stage::Equilibrium]),
        Command::Insurance(a) => manifest(a, vec![Stage::Scenarios, Stage::Equilibrium, Stage::Insurance]),
        Command::Report(a) => manifest(a, Stage::ALL.to_vec()),
        Command::Run { args, stages } => {
            let stages = if stages.is_empty() { Stage::ALL.to_vec() } else { stages };
            let mut m = manifest(args, stages);
            if m.stages.len() == Stage::ALL.len() {
                // a config without insurance simply skips that stage
                if let Ok(cfg) = SystemConfig::load(&m.config) {
                    if cfg.insurance.as_ref().is_none_or(|i| i.catalog.is_empty()) {
                        m.stages.retain(|&s| s != Stage::Insurance);
                    }
                }
            }
            m
        }
    };
    match run_pipeline(&m) {
        Ok(out) => {
            for f in &out.files {
                println!("wrote {}", f.display());
            }
            0
        }
        Err(e) => {
            eprintln!("error {e}");
            e.exit_code()
        }
    }
}
