//! The `edgeshare` command-line front end.
//!
//! Exit codes: 0 on success, 2 for usage or configuration errors, 3 for
//! numerical failures.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::delay_model::SharingPlan;
use crate::optimizer::{self, OptimizationResult, Scheme, SearchOptions};
use crate::scenario::{self, dbm_to_watts, load_scenario, random_scenario, save_scenario, Scenario};
use crate::training_sim::{self, make_synthetic_task, partition_by_histograms, ModelConfig, SharingPolicy, TrainingTrace};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error("numerical: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "edgeshare", version, about = "D2D data sharing and radio allocation for edge training")]
pub struct Cli {
    /// Scenario JSON file (defaults to the built-in six-device setup).
    #[arg(short = 's', long = "scenario", global = true)]
    pub scenario: Option<PathBuf>,
    /// Output file.
    #[arg(short = 'o', long = "out", global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Relative width at which the tau1 search stops.
    #[arg(long, global = true, default_value_t = 1e-4)]
    pub tol: f64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a scenario file.
    Scenario(ScenarioArgs),
    /// Solve one scheme and write the result JSON.
    Optimize(OptimizeArgs),
    /// Sweep one parameter over a list of values and write a long-format CSV.
    Sweep(SweepArgs),
    /// Train on synthetic data under a plan and write the trace CSV.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
pub struct ScenarioArgs {
    #[arg(long, conflicts_with = "random")]
    pub paper: bool,
    #[arg(long)]
    pub random: bool,
    /// Number of devices for --random.
    #[arg(long, default_value_t = 6)]
    pub k: usize,
    /// Number of global iterations.
    #[arg(long)]
    pub m: Option<u32>,
}

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    #[arg(long, default_value = "p1")]
    pub scheme: Scheme,
    /// Also write the sampled tau1 profile as CSV.
    #[arg(long)]
    pub profile: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    pub grid: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, ValueEnum, Serialize, Deserialize)]
pub enum SweepVariable {
    #[value(name = "M")]
    #[serde(rename = "M")]
    M,
    #[value(name = "B")]
    #[serde(rename = "B")]
    B,
    #[value(name = "K")]
    #[serde(rename = "K")]
    K,
    #[value(name = "tx_power")]
    #[serde(rename = "tx_power")]
    TxPower,
}

impl SweepVariable {
    pub fn name(self) -> &'static str {
        match self {
            SweepVariable::M => "M",
            SweepVariable::B => "B",
            SweepVariable::K => "K",
            SweepVariable::TxPower => "tx_power",
        }
    }
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub variable: SweepVariable,
    /// Comma-separated values. B in Hz, tx_power in dBm.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    pub values: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "p1,p2,fixed")]
    pub schemes: Vec<Scheme>,
    #[arg(long, default_value_t = 64)]
    pub grid: usize,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scheme solved inline when no --plan is given.
    #[arg(long, default_value = "p1", conflicts_with = "plan")]
    pub scheme: Scheme,
    /// Result or plan JSON produced by `optimize`.
    #[arg(long)]
    pub plan: Option<PathBuf>,
    /// Also train without sharing and write that trace next to the first.
    #[arg(long)]
    pub compare: bool,
    /// Number of global iterations (overrides the scenario).
    #[arg(long)]
    pub m: Option<u32>,
    #[arg(long, default_value_t = 10)]
    pub features: usize,
    #[arg(long, default_value_t = 1.0)]
    pub separation: f64,
    /// Learning rate (overrides the scenario).
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long, value_enum, default_value = "proportional")]
    pub policy: PolicyArg,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PolicyArg {
    Proportional,
    ClassRebalancing,
}

impl From<PolicyArg> for SharingPolicy {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Proportional => SharingPolicy::Proportional,
            PolicyArg::ClassRebalancing => SharingPolicy::ClassRebalancing,
        }
    }
}

/// One row of the sweep CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub scheme: Scheme,
    pub variable: SweepVariable,
    pub value: f64,
    pub objective_seconds: Option<f64>,
    pub tau1: Option<f64>,
    pub converged: bool,
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Usage(format!("--jobs: {e}")))?;
    if !(cli.tol > 0.0 && cli.tol < 1.0) {
        return Err(CliError::Usage(format!("--tol must lie in (0, 1), got {}", cli.tol)));
    }
    pool.install(|| match &cli.command {
        Command::Scenario(a) => cmd_scenario(cli, a),
        Command::Optimize(a) => cmd_optimize(cli, a),
        Command::Sweep(a) => cmd_sweep(cli, a),
        Command::Simulate(a) => cmd_simulate(cli, a),
    })
}

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

fn base_scenario(cli: &Cli) -> Result<Scenario, CliError> {
    match &cli.scenario {
        Some(path) => load_scenario(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display()))),
        None => Ok(scenario::build_paper_scenario()),
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn search_options(cli: &Cli, grid: usize) -> Result<SearchOptions, CliError> {
    if grid < 2 {
        return Err(CliError::Usage(format!("--grid must be at least 2, got {grid}")));
    }
    Ok(SearchOptions {
        grid_points: grid,
        rel_tol: cli.tol,
        ..SearchOptions::default()
    })
}

pub fn cmd_scenario(cli: &Cli, a: &ScenarioArgs) -> Result<(), CliError> {
    let mut s = match (a.paper, a.random) {
        (true, false) => scenario::build_paper_scenario(),
        (false, true) => random_scenario(cli.seed, a.k).map_err(|e| CliError::Usage(e.to_string()))?,
        _ => return Err(CliError::Usage("exactly one of --paper or --random is required".into())),
    };
    if let Some(m) = a.m {
        if m == 0 {
            return Err(CliError::Usage("--m must be at least 1".into()));
        }
        s = s.with_global_iters(m);
    }
    match &cli.out {
        Some(path) => save_scenario(&s, path).map_err(config_err),
        None => {
            println!("{}", scenario::scenario_to_json(&s));
            Ok(())
        }
    }
}

pub fn profile_csv(result: &OptimizationResult) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["tau1", "objective", "converged"]).map_err(config_err)?;
    for p in &result.tau1_profile {
        w.write_record([p.tau1.to_string(), p.objective.to_string(), p.converged.to_string()])
            .map_err(config_err)?;
    }
    String::from_utf8(w.into_inner().map_err(config_err)?).map_err(config_err)
}

pub fn cmd_optimize(cli: &Cli, a: &OptimizeArgs) -> Result<(), CliError> {
    let s = base_scenario(cli)?;
    let opts = search_options(cli, a.grid)?;
    let result = optimizer::solve(a.scheme, &s, &opts).map_err(|e| CliError::Numerical(e.to_string()))?;
    if let Some(path) = &cli.out {
        let json = serde_json::to_string_pretty(&result).map_err(config_err)?;
        write_text(path, &json)?;
    }
    if let Some(path) = &a.profile {
        write_text(path, &profile_csv(&result)?)?;
    }
    println!("objective_seconds={}", result.objective());
    if !result.report.converged {
        return Err(CliError::Numerical(format!(
            "{} did not converge (duality measure {:e})",
            a.scheme, result.report.final_duality_measure
        )));
    }
    Ok(())
}

/// The scenario for one sweep point. `K` sweeps draw a random scenario with
/// that many devices from `seed`, keeping the base scenario's `M`.
pub fn sweep_scenario(base: &Scenario, variable: SweepVariable, value: f64, seed: u64) -> Result<Scenario, CliError> {
    let bad = |why: &str| CliError::Usage(format!("{} value {value}: {why}", variable.name()));
    let mut s = base.clone();
    match variable {
        SweepVariable::M => {
            if value < 1.0 || value.fract() != 0.0 || value > u32::MAX as f64 {
                return Err(bad("must be a positive integer"));
            }
            s.params.global_iters = value as u32;
        }
        SweepVariable::B => {
            if !(value > 0.0 && value.is_finite()) {
                return Err(bad("must be positive"));
            }
            s.params.bandwidth = value;
        }
        SweepVariable::K => {
            if value < 2.0 || value.fract() != 0.0 || value > 64.0 {
                return Err(bad("must be an integer in 2..=64"));
            }
            s = random_scenario(seed, value as usize)
                .map_err(|e| bad(&e.to_string()))?
                .with_global_iters(base.params.global_iters);
        }
        SweepVariable::TxPower => {
            if !value.is_finite() {
                return Err(bad("must be finite"));
            }
            for d in &mut s.devices {
                d.tx_power = dbm_to_watts(value);
            }
        }
    }
    s.validate().map_err(|e| bad(&e.to_string()))?;
    Ok(s)
}

pub fn sweep_rows(base: &Scenario, a: &SweepArgs, seed: u64, opts: &SearchOptions) -> Result<Vec<SweepRow>, CliError> {
    if a.values.is_empty() {
        return Err(CliError::Usage("--values must not be empty".into()));
    }
    if a.schemes.is_empty() {
        return Err(CliError::Usage("--schemes must not be empty".into()));
    }
    let scenarios: Vec<(f64, Scenario)> = a
        .values
        .iter()
        .map(|&v| sweep_scenario(base, a.variable, v, seed).map(|s| (v, s)))
        .collect::<Result<_, _>>()?;
    let mut schemes = a.schemes.clone();
    schemes.sort();
    schemes.dedup();
    let jobs: Vec<(Scheme, f64, &Scenario)> = schemes
        .iter()
        .flat_map(|&sch| scenarios.iter().map(move |(v, s)| (sch, *v, s)))
        .collect();
    let mut rows: Vec<SweepRow> = jobs
        .par_iter()
        .map(|&(scheme, value, s)| {
            // the inner grid runs sequentially; parallelism comes from rows
            let opts = SearchOptions {
                parallel: false,
                ..opts.clone()
            };
            match optimizer::solve(scheme, s, &opts) {
                Ok(r) => SweepRow {
                    scheme,
                    variable: a.variable,
                    value,
                    objective_seconds: Some(r.objective()),
                    tau1: Some(r.plan.tau1),
                    converged: r.report.converged,
                },
                Err(_) => SweepRow {
                    scheme,
                    variable: a.variable,
                    value,
                    objective_seconds: None,
                    tau1: None,
                    converged: false,
                },
            }
        })
        .collect();
    rows.sort_by(|x, y| x.scheme.cmp(&y.scheme).then(x.value.total_cmp(&y.value)));
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["scheme", "variable", "value", "objective_seconds", "tau1", "converged"])
        .map_err(config_err)?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for r in rows {
        w.write_record([
            r.scheme.name().to_string(),
            r.variable.name().to_string(),
            r.value.to_string(),
            opt(r.objective_seconds),
            opt(r.tau1),
            r.converged.to_string(),
        ])
        .map_err(config_err)?;
    }
    String::from_utf8(w.into_inner().map_err(config_err)?).map_err(config_err)
}

pub fn cmd_sweep(cli: &Cli, a: &SweepArgs) -> Result<(), CliError> {
    let base = base_scenario(cli)?;
    let opts = search_options(cli, a.grid)?;
    let rows = sweep_rows(&base, a, cli.seed, &opts)?;
    let text = sweep_csv(&rows)?;
    match &cli.out {
        Some(path) => write_text(path, &text)?,
        None => print!("{text}"),
    }
    if rows.iter().all(|r| r.objective_seconds.is_none()) {
        return Err(CliError::Numerical("every sweep row failed".into()));
    }
    Ok(())
}

#[derive(Deserialize)]
#[serde(untagged)]
enum PlanFile {
    Result(Box<OptimizationResult>),
    Plan(SharingPlan),
}

fn load_plan(path: &Path, s: &Scenario) -> Result<SharingPlan, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let plan = match serde_json::from_str::<PlanFile>(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))? {
        PlanFile::Result(r) => r.plan,
        PlanFile::Plan(p) => p,
    };
    if plan.num_devices() != s.num_devices() {
        return Err(CliError::Config(format!(
            "plan is for {} devices, scenario has {}",
            plan.num_devices(),
            s.num_devices()
        )));
    }
    Ok(plan)
}

/// Path of the no-sharing trace written next to `out`.
pub fn comparison_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map_or("trace".into(), |s| s.to_string_lossy().into_owned());
    let ext = out.extension().map_or("csv".into(), |e| e.to_string_lossy().into_owned());
    out.with_file_name(format!("{stem}_no_sharing.{ext}"))
}

/// Trains on a synthetic task partitioned by the scenario's label
/// histograms. Returns the trace under `plan`, and with `compare` also the
/// trace without sharing under the equal upload split.
pub fn simulate(s: &Scenario, plan: &SharingPlan, a: &SimulateArgs, seed: u64) -> Result<(TrainingTrace, Option<TrainingTrace>), CliError> {
    if a.features == 0 || !(a.separation >= 0.0) {
        return Err(CliError::Usage("--features must be positive and --separation non-negative".into()));
    }
    let histograms: Vec<Vec<u64>> = s.devices.iter().map(|d| d.label_histogram.clone()).collect();
    let num_classes = histograms.iter().map(Vec::len).max().unwrap_or(0);
    if num_classes < 2 {
        return Err(CliError::Config("scenario label histograms need at least two classes".into()));
    }
    let per_class = (0..num_classes)
        .map(|c| histograms.iter().map(|h| h.get(c).copied().unwrap_or(0)).sum::<u64>())
        .max()
        .unwrap_or(0) as usize;
    let task = make_synthetic_task(num_classes, a.features, per_class * num_classes, a.separation, seed);
    let parts = partition_by_histograms(&task.pool, &histograms, seed).map_err(config_err)?;
    let config = ModelConfig {
        learning_rate: a.eta,
        policy: a.policy.into(),
        seed,
    };
    let num = |e: training_sim::SimError| CliError::Numerical(e.to_string());
    let main = training_sim::run_training(s, &parts, plan, &config, &task.test).map_err(num)?;
    let other = if a.compare {
        Some(training_sim::run_training(s, &parts, &SharingPlan::equal_split(s), &config, &task.test).map_err(num)?)
    } else {
        None
    };
    Ok((main, other))
}

fn trace_csv(trace: &TrainingTrace) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    trace.write_csv(&mut buf).map_err(config_err)?;
    Ok(buf)
}

pub fn cmd_simulate(cli: &Cli, a: &SimulateArgs) -> Result<(), CliError> {
    let mut s = base_scenario(cli)?;
    let plan = match &a.plan {
        Some(path) => load_plan(path, &s)?,
        None => {
            let opts = search_options(cli, 64)?;
            optimizer::solve(a.scheme, &s, &opts)
                .map_err(|e| CliError::Numerical(e.to_string()))?
                .plan
        }
    };
    if let Some(m) = a.m {
        s.params.global_iters = m;
    }
    let (main, other) = simulate(&s, &plan, a, cli.seed)?;
    match &cli.out {
        Some(path) => {
            fs::write(path, trace_csv(&main)?).map_err(config_err)?;
            if let Some(t) = &other {
                fs::write(comparison_path(path), trace_csv(t)?).map_err(config_err)?;
            }
        }
        None => {
            print!("{}", String::from_utf8_lossy(&trace_csv(&main)?));
            if let Some(t) = &other {
                print!("{}", String::from_utf8_lossy(&trace_csv(t)?));
            }
        }
    }
    eprintln!("final_accuracy={}", main.final_accuracy());
    if let Some(t) = &other {
        eprintln!("final_accuracy_no_sharing={}", t.final_accuracy());
    }
    Ok(())
}
