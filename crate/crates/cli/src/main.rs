//! `lanefree`: run ring-road simulations, density sweeps and single solves.
//!
//! Exit status: 0 success, 2 configuration or usage error, 3 audit failure
//! (physical overlap, corridor or speed violation, failed emergency replan).

mod config;
mod instance;
mod output;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lanefree::simulator::{diagram_rows, run, RunOptions, RunStatistics, ScenarioConfig};
use lanefree::Error;

use config::ConfigError;
use instance::{solve_instance, Instance};
use output::*;

#[derive(Parser)]
#[command(name = "lanefree", version, about = "Lane-free traffic on a ring road")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one scenario and write trajectories, detectors and histograms.
    Run(RunArgs),
    /// Simulate every density/seed pair and write a fundamental diagram.
    Sweep(SweepArgs),
    /// Solve one optimal-control instance and write the plan.
    SolveOnce(SolveArgs),
}

#[derive(Args)]
struct Common {
    /// Scenario file (TOML); built-in defaults when omitted.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(short, long, default_value = "out")]
    out: PathBuf,
    /// Planner threads; results do not depend on this.
    #[arg(short, long, default_value_t = 1)]
    workers: usize,
    /// Per-solve wall-clock budget in milliseconds; makes runs timing dependent.
    #[arg(long)]
    time_budget: Option<f64>,
    /// Simulated seconds, overriding the file.
    #[arg(long)]
    duration: Option<f64>,
    /// Seconds discarded before detectors count, overriding the file.
    #[arg(long)]
    warmup: Option<f64>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// Placement seed, overriding the file.
    #[arg(short, long)]
    seed: Option<u64>,
    /// Vehicles per km, overriding the file.
    #[arg(short, long)]
    density: Option<f64>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated densities (veh/km).
    #[arg(long, value_delimiter = ',', default_value = "50,100,150,200,250,300,350,400,450,500")]
    densities: Vec<String>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
    seeds: Vec<String>,
}

#[derive(Args)]
struct SolveArgs {
    /// Instance file (TOML).
    #[arg(short, long)]
    instance: PathBuf,
    #[arg(short, long, default_value = "out")]
    out: PathBuf,
}

enum Failure {
    Config(String),
    Audit(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Io(_) => 1,
            Failure::Config(_) => 2,
            Failure::Audit(_) => 3,
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

fn classify(e: Error) -> Failure {
    match e {
        Error::Audit { .. } | Error::EmergencyFailed { .. } => Failure::Audit(e.to_string()),
        Error::Config(_) | Error::OutOfRange { .. } | Error::OutsideCorridor { .. } | Error::HorizonMismatch { .. } => {
            Failure::Config(e.to_string())
        }
        other => Failure::Io(other.to_string()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::SolveOnce(a) => cmd_solve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (Failure::Config(m) | Failure::Audit(m) | Failure::Io(m)) = &f;
            eprintln!("lanefree: {m}");
            ExitCode::from(f.code())
        }
    }
}

/// Scenario with command-line overrides applied, and its source text.
fn scenario(common: &Common) -> Result<(String, ScenarioConfig), Failure> {
    let (text, mut cfg) = match &common.config {
        Some(path) => config::load::<ScenarioConfig>(path)?,
        None => (String::new(), ScenarioConfig::default()),
    };
    if let Some(ms) = common.time_budget {
        if !(ms > 0.0) {
            return Err(Failure::Config(format!("--time-budget must be positive, got {ms}")));
        }
        cfg.mpc.solver.time_budget = Some(ms / 1e3);
    }
    if let Some(d) = common.duration {
        cfg.duration = d;
    }
    if let Some(w) = common.warmup {
        cfg.warmup = w;
    }
    Ok((text, cfg))
}

fn prepare_out(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::Io(format!("cannot create {}: {e}", dir.display())))
}

fn cmd_run(a: RunArgs) -> Result<(), Failure> {
    let (text, mut cfg) = scenario(&a.common)?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(d) = a.density {
        cfg.density = d;
    }
    cfg.validate().map_err(classify)?;
    prepare_out(&a.common.out)?;
    let opts = RunOptions {
        workers: a.common.workers,
        record_trajectories: true,
    };
    let out = match run(&cfg, opts) {
        Ok(out) => out,
        Err(e) => {
            if let Error::Audit { dump, .. } | Error::EmergencyFailed { dump, .. } = &e {
                fs::write(a.common.out.join("audit_failure.txt"), dump)?;
            }
            return Err(classify(e));
        }
    };
    let dir = &a.common.out;
    write_trajectories(&dir.join(TRAJECTORIES), &out.trajectories)?;
    write_detectors(&dir.join(DETECTORS), &out.stats)?;
    write_histograms(&dir.join(HISTOGRAMS), &out.stats)?;
    let manifest = RunManifest {
        command: "run".into(),
        config_digest: sha256_hex(text.as_bytes()),
        seed: Some(cfg.seed),
        versions: Versions::current(),
        outputs: vec![TRAJECTORIES.into(), DETECTORS.into(), HISTOGRAMS.into()],
        solve_times: SolveTimes::from_seconds(&out.stats.solve_times),
        runs: vec![RunSummary::from(&out.stats)],
        failures: Vec::new(),
    };
    manifest.write(dir)?;
    println!(
        "density {} seed {}: mean flow {:.0} veh/h, {} plans, {} emergency",
        cfg.density, cfg.seed, out.stats.mean_flow, out.stats.plans, out.stats.emergency_plans
    );
    Ok(())
}

fn parse_list<T: std::str::FromStr>(name: &str, raw: &[String]) -> Result<Vec<T>, Failure> {
    let values: Vec<T> = raw
        .iter()
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| Failure::Config(format!("--{name}: cannot parse {s:?}")))
        })
        .collect::<Result<_, _>>()?;
    if values.is_empty() {
        return Err(Failure::Config(format!("--{name} must list at least one value")));
    }
    Ok(values)
}

fn cmd_sweep(a: SweepArgs) -> Result<(), Failure> {
    let densities: Vec<f64> = parse_list("densities", &a.densities)?;
    let seeds: Vec<u64> = parse_list("seeds", &a.seeds)?;
    let (text, base) = scenario(&a.common)?;
    let mut jobs = Vec::new();
    for &d in &densities {
        for &seed in &seeds {
            let cfg = ScenarioConfig {
                density: d,
                seed,
                ..base.clone()
            };
            cfg.validate().map_err(classify)?;
            jobs.push(cfg);
        }
    }
    prepare_out(&a.common.out)?;
    let opts = RunOptions {
        workers: a.common.workers,
        record_trajectories: false,
    };
    let mut runs: Vec<(f64, Result<RunStatistics, String>)> = Vec::new();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for cfg in &jobs {
        let result = run(cfg, opts).map(|o| o.stats).map_err(|e| e.to_string());
        match &result {
            Ok(s) => {
                eprintln!("density {} seed {}: mean flow {:.0} veh/h", cfg.density, cfg.seed, s.mean_flow);
                rows.push(ReplicationRow {
                    density: cfg.density,
                    seed: cfg.seed,
                    status: "ok".into(),
                    mean_flow: s.mean_flow,
                    plans: s.plans,
                    emergency_plans: s.emergency_plans,
                    digest: s.digest.clone(),
                });
            }
            Err(e) => {
                eprintln!("density {} seed {}: {e}", cfg.density, cfg.seed);
                failures.push(format!("density {} seed {}: {e}", cfg.density, cfg.seed));
                rows.push(ReplicationRow {
                    density: cfg.density,
                    seed: cfg.seed,
                    status: "failed".into(),
                    mean_flow: f64::NAN,
                    plans: 0,
                    emergency_plans: 0,
                    digest: String::new(),
                });
            }
        }
        runs.push((cfg.density, result));
    }
    let dir = &a.common.out;
    write_diagram(&dir.join(DIAGRAM), &diagram_rows(&densities, &runs))?;
    write_replications(&dir.join(REPLICATIONS), &rows)?;
    let ok: Vec<&RunStatistics> = runs.iter().filter_map(|(_, r)| r.as_ref().ok()).collect();
    let times: Vec<f64> = ok.iter().flat_map(|s| s.solve_times.iter().copied()).collect();
    let manifest = RunManifest {
        command: "sweep".into(),
        config_digest: sha256_hex(text.as_bytes()),
        seed: None,
        versions: Versions::current(),
        outputs: vec![DIAGRAM.into(), REPLICATIONS.into()],
        solve_times: SolveTimes::from_seconds(&times),
        runs: ok.iter().map(|s| RunSummary::from(*s)).collect(),
        failures: failures.clone(),
    };
    manifest.write(dir)?;
    if failures.is_empty() {
        Ok(())
    } else {
        Err(Failure::Audit(format!("{} of {} replications failed", failures.len(), jobs.len())))
    }
}

fn cmd_solve(a: SolveArgs) -> Result<(), Failure> {
    let (text, inst) = config::load::<Instance>(&a.instance)?;
    let (spec, plan, summary) = solve_instance(&inst).map_err(classify)?;
    prepare_out(&a.out)?;
    write_plan(&a.out.join(PLAN), &spec, &plan)?;
    let report = serde_json::json!({
        "instance_digest": sha256_hex(text.as_bytes()),
        "versions": Versions::current(),
        "summary": summary,
    });
    fs::write(
        a.out.join(SOLVE_REPORT),
        serde_json::to_string_pretty(&report).map_err(std::io::Error::other)? + "\n",
    )?;
    println!(
        "J = {:.6} (zero control {:.6}), {} iterations, {:?}",
        summary.report.final_cost, summary.zero_control_cost, summary.report.iterations, summary.report.stop_reason
    );
    if summary.physical_overlaps.is_empty() {
        Ok(())
    } else {
        Err(Failure::Audit(format!(
            "plan overlaps obstacles at (step, id) {:?}",
            summary.physical_overlaps
        )))
    }
}
