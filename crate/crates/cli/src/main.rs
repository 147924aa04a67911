//! `impdr`: run monitoring scenarios, sweeps and orienteering benchmarks.

mod manifest;
mod plotdata;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use impdr_core::mpc::kop::{solve_kop, KopParams, OpInstance};
use impdr_core::mpc::{gradient_error, random_problem};
use impdr_core::sim::{self, write_run, PlannerKind, Scenario, ScenarioConfig};

use manifest::Manifest;

/// Exit status for malformed configuration or arguments.
const EXIT_CONFIG: u8 = 1;
/// Exit status for failures while running.
const EXIT_RUNTIME: u8 = 2;

#[derive(Parser, Debug)]
#[command(name = "impdr", version, about = "Receding-horizon monitoring of dynamic reward fields")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one closed-loop scenario and write trace.csv, timings.csv, metrics.json and manifest.json.
    Run(RunArgs),
    /// Run a grid of scenarios and write sweep.csv with one row per cell.
    Sweep(SweepArgs),
    /// Solve a kinematic orienteering instance for one or more travel budgets.
    Kop(KopArgs),
    /// Turn a trace into reward snapshots and vehicle paths for plotting.
    Plotdata(PlotArgs),
    /// Compare planner gradients with finite differences on random instances.
    CheckGrad(CheckGradArgs),
}

#[derive(Args, Debug, Clone)]
struct OutArgs {
    /// Output directory.
    #[arg(long, env = "IMPDR_OUT_DIR", default_value = "impdr-out")]
    out: PathBuf,
}

#[derive(Args, Debug, Clone, Default)]
struct Overrides {
    /// Random seed for multistart perturbations and GRASP.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of sampling periods to simulate.
    #[arg(long)]
    duration_steps: Option<usize>,
    /// Planner: impdr, grasp-lb, grasp-ub or static.
    #[arg(long)]
    planner: Option<PlannerKind>,
    /// Solves per planning step (reward-perturbed restarts).
    #[arg(long)]
    multistart: Option<usize>,
    /// Wall-clock cap per planning step in milliseconds; makes runs non-reproducible.
    #[arg(long)]
    wall_cap_ms: Option<u64>,
}

impl Overrides {
    fn apply(&self, cfg: &mut ScenarioConfig) {
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(d) = self.duration_steps {
            cfg.duration_steps = d;
        }
        if let Some(p) = self.planner {
            cfg.planner = p;
        }
        if let Some(m) = self.multistart {
            cfg.mpc.multistart_count = m;
            if m > 1 && cfg.mpc.reward_noise_sigma == 0.0 {
                cfg.mpc.reward_noise_sigma = 0.1;
            }
        }
        if let Some(w) = self.wall_cap_ms {
            cfg.mpc.solver.wall_cap_ms = Some(w);
        }
    }
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Scenario file (TOML).
    #[arg(long, conflicts_with = "scenario")]
    config: Option<PathBuf>,
    /// Library scenario, e.g. flotsam, exploration, top-compare, grid-sweep(49,3).
    #[arg(long)]
    scenario: Option<String>,
    #[command(flatten)]
    overrides: Overrides,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// Target counts (perfect squares), comma separated.
    #[arg(long = "n-p", value_delimiter = ',', default_value = "100")]
    n_p: Vec<usize>,
    /// Vehicle counts, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    m: Vec<usize>,
    /// Horizon lengths N_s, comma separated.
    #[arg(long = "horizon", value_delimiter = ',', default_value = "20")]
    horizon: Vec<usize>,
    /// Cells run concurrently. Timings are only comparable with 1.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[command(flatten)]
    overrides: Overrides,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
struct KopArgs {
    /// Orienteering instance: budget line, then `x y score` rows; first and last rows are start and end.
    #[arg(long)]
    instance: PathBuf,
    /// Travel budgets, comma separated.
    #[arg(long = "c-max", value_delimiter = ',', required = true)]
    c_max: Vec<f64>,
    /// Starts per budget.
    #[arg(long, default_value_t = 10)]
    multistart: usize,
    /// Reference scores to report next to the results, one per budget.
    #[arg(long, value_delimiter = ',')]
    reference: Vec<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
struct PlotArgs {
    /// trace.csv, or a run directory containing it.
    #[arg(long)]
    trace: PathBuf,
    /// Snapshot times in seconds.
    #[arg(long, value_delimiter = ',', default_value = "10,15,20,25")]
    times: Vec<f64>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
struct CheckGradArgs {
    /// Number of random instances.
    #[arg(long, default_value_t = 50)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Largest accepted relative error.
    #[arg(long, default_value_t = 1e-5)]
    tolerance: f64,
}

/// Error tagged with the exit status it should produce.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

fn config_err(e: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: EXIT_CONFIG,
        error: e.into(),
    }
}

fn runtime_err(e: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: EXIT_RUNTIME,
        error: e.into(),
    }
}

/// Library errors about inputs map to the configuration status, everything else to runtime.
fn classify(e: impdr_core::Error) -> Failure {
    if e.is_config_error() {
        config_err(e)
    } else {
        runtime_err(e)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let command_line: Vec<String> = std::env::args().collect();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a, &command_line),
        Command::Sweep(a) => cmd_sweep(a, &command_line),
        Command::Kop(a) => cmd_kop(a, &command_line),
        Command::Plotdata(a) => cmd_plotdata(a, &command_line),
        Command::CheckGrad(a) => cmd_check_grad(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn load_scenario(config: Option<&Path>, scenario: Option<&str>) -> Result<ScenarioConfig, Failure> {
    match (config, scenario) {
        (Some(path), _) => ScenarioConfig::load(path).map_err(|e| match e {
            impdr_core::Error::Io { .. } => config_err(e),
            e => classify(e),
        }),
        (None, Some(name)) => match sim::scenario_library(name).map_err(classify)? {
            Scenario::ClosedLoop(c) => Ok(c),
            Scenario::Kop { .. } => Err(config_err(anyhow!("`{name}` is an orienteering benchmark; use the kop subcommand"))),
        },
        (None, None) => Err(config_err(anyhow!("either --config or --scenario is required"))),
    }
}

fn cmd_run(a: RunArgs, command_line: &[String]) -> Result<(), Failure> {
    let mut cfg = load_scenario(a.config.as_deref(), a.scenario.as_deref())?;
    a.overrides.apply(&mut cfg);
    cfg.validate().map_err(classify)?;
    let out = &a.out.out;
    let started = Instant::now();
    let trace = sim::run_closed_loop(&cfg).map_err(classify)?;
    let (metrics, mut files) = write_run(&trace, out).map_err(runtime_err)?;
    let config_path = out.join("config.toml");
    std::fs::write(&config_path, cfg.to_toml())
        .with_context(|| format!("writing {}", config_path.display()))
        .map_err(runtime_err)?;
    files.push(config_path);
    let mut manifest = Manifest::new("run", command_line, out, cfg.seed);
    manifest.config = a.config.as_ref().map(|p| p.display().to_string());
    manifest.scenario = a.scenario.clone().or(Some(cfg.name.clone()));
    manifest.add_files(out, &files).map_err(runtime_err)?;
    manifest.write(out).map_err(runtime_err)?;
    println!(
        "{}: {} steps, r_eq {:.3}, r_max {:.3}, t_avg {:.2} ms, t_max {:.2} ms ({:.1?})",
        cfg.name,
        metrics.steps,
        metrics.r_eq,
        metrics.r_max,
        metrics.t_avg_ms,
        metrics.t_max_ms,
        started.elapsed()
    );
    println!("wrote {}", out.display());
    match &trace.failure {
        Some(f) => Err(runtime_err(anyhow!("planner failed at {f}; partial trace written"))),
        None => Ok(()),
    }
}

struct SweepCell {
    n_p: usize,
    m: usize,
    n_s: usize,
}

fn cmd_sweep(a: SweepArgs, command_line: &[String]) -> Result<(), Failure> {
    if a.n_p.is_empty() || a.m.is_empty() || a.horizon.is_empty() {
        return Err(config_err(anyhow!("sweep has no cells")));
    }
    if a.jobs == 0 {
        return Err(config_err(anyhow!("--jobs must be >= 1")));
    }
    let mut cells = Vec::new();
    for &n_p in &a.n_p {
        for &m in &a.m {
            for &n_s in &a.horizon {
                cells.push(SweepCell { n_p, m, n_s });
            }
        }
    }
    let mut configs = Vec::with_capacity(cells.len());
    for c in &cells {
        let mut cfg = sim::grid_sweep(c.n_p, c.m).map_err(classify)?;
        cfg.horizon_steps = c.n_s;
        cfg.name = format!("sweep-np{}-m{}-ns{}", c.n_p, c.m, c.n_s);
        a.overrides.apply(&mut cfg);
        cfg.validate().map_err(classify)?;
        configs.push(cfg);
    }
    let out = a.out.out.clone();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.jobs)
        .build()
        .map_err(runtime_err)?;
    let results: Vec<Result<(sim::MetricsSummary, Vec<PathBuf>), String>> = pool.install(|| {
        configs
            .par_iter()
            .map(|cfg| {
                let dir = out.join(&cfg.name);
                let trace = sim::run_closed_loop(cfg).map_err(|e| e.to_string())?;
                let (m, files) = write_run(&trace, &dir).map_err(|e| e.to_string())?;
                eprintln!("{}: r_eq {:.3}, t_avg {:.2} ms", cfg.name, m.r_eq, m.t_avg_ms);
                Ok((m, files))
            })
            .collect()
    });

    let table = out.join("sweep.csv");
    std::fs::create_dir_all(&out).map_err(runtime_err)?;
    let mut w = csv::Writer::from_path(&table).map_err(runtime_err)?;
    w.write_record(["n_p", "m", "N_s", "t_avg", "t_max", "r_eq", "r_max", "status"])
        .map_err(runtime_err)?;
    let mut files = Vec::new();
    let mut failed = 0;
    for (cell, res) in cells.iter().zip(&results) {
        let head = [cell.n_p.to_string(), cell.m.to_string(), cell.n_s.to_string()];
        let row: Vec<String> = match res {
            Ok((m, f)) => {
                files.extend(f.iter().cloned());
                let status = match &m.failure {
                    Some(e) => {
                        failed += 1;
                        format!("failed: {e}")
                    }
                    None => "ok".into(),
                };
                head.into_iter()
                    .chain([m.t_avg_ms, m.t_max_ms, m.r_eq, m.r_max].iter().map(|v| format!("{v:.6}")))
                    .chain([status])
                    .collect()
            }
            Err(e) => {
                failed += 1;
                head.into_iter()
                    .chain(["", "", "", ""].iter().map(|s| s.to_string()))
                    .chain([format!("failed: {e}")])
                    .collect()
            }
        };
        w.write_record(&row).map_err(runtime_err)?;
    }
    w.flush().map_err(runtime_err)?;
    drop(w);
    files.push(table.clone());
    let seed = a.overrides.seed.unwrap_or(0);
    let mut manifest = Manifest::new("sweep", command_line, &out, seed);
    manifest.add_files(&out, &files).map_err(runtime_err)?;
    manifest.write(&out).map_err(runtime_err)?;
    println!("wrote {} ({} cells, {} failed)", table.display(), cells.len(), failed);
    if failed > 0 {
        return Err(runtime_err(anyhow!("{failed} sweep cell(s) failed")));
    }
    Ok(())
}

fn cmd_kop(a: KopArgs, command_line: &[String]) -> Result<(), Failure> {
    if a.c_max.is_empty() {
        return Err(config_err(anyhow!("no --c-max given")));
    }
    if !a.reference.is_empty() && a.reference.len() != a.c_max.len() {
        return Err(config_err(anyhow!(
            "{} reference values for {} budgets",
            a.reference.len(),
            a.c_max.len()
        )));
    }
    let instance = OpInstance::read(&a.instance).map_err(classify)?;
    let params = KopParams {
        multistart_count: a.multistart,
        seed: a.seed.unwrap_or(0),
        ..KopParams::default()
    };
    let out = &a.out.out;
    std::fs::create_dir_all(out).map_err(runtime_err)?;
    let table = out.join("kop.csv");
    let mut w = csv::Writer::from_path(&table).map_err(runtime_err)?;
    w.write_record([
        "instance",
        "C_max",
        "horizon_steps",
        "best_score",
        "reference",
        "endpoint_deviation",
        "duration",
        "t_avg_s",
        "start_scores",
    ])
    .map_err(runtime_err)?;
    for (idx, &c_max) in a.c_max.iter().enumerate() {
        let run = solve_kop(&instance, c_max, &params).map_err(classify)?;
        let reference = a.reference.get(idx).map_or(String::new(), |r| r.to_string());
        let scores: Vec<String> = run.start_scores.iter().map(|s| s.to_string()).collect();
        w.write_record([
            instance.name.clone(),
            c_max.to_string(),
            run.horizon_steps.to_string(),
            run.score.collected.to_string(),
            reference.clone(),
            format!("{:.6}", run.score.endpoint_deviation),
            run.score.duration.to_string(),
            format!("{:.3}", run.time_per_start.as_secs_f64()),
            scores.join(" "),
        ])
        .map_err(runtime_err)?;
        println!(
            "C_max {c_max}: best {} (reference {}), endpoint deviation {:.4} m, {:.1} s per start",
            run.score.collected,
            if reference.is_empty() { "-" } else { &reference },
            run.score.endpoint_deviation,
            run.time_per_start.as_secs_f64()
        );
    }
    w.flush().map_err(runtime_err)?;
    drop(w);
    let mut manifest = Manifest::new("kop", command_line, out, params.seed);
    manifest.config = Some(a.instance.display().to_string());
    manifest.add_files(out, &[table]).map_err(runtime_err)?;
    manifest.write(out).map_err(runtime_err)?;
    Ok(())
}

fn cmd_plotdata(a: PlotArgs, command_line: &[String]) -> Result<(), Failure> {
    let trace = if a.trace.is_dir() {
        a.trace.join(sim::TRACE_FILE)
    } else {
        a.trace.clone()
    };
    if !trace.exists() {
        return Err(config_err(anyhow!("trace {} does not exist", trace.display())));
    }
    if a.times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
        return Err(config_err(anyhow!("snapshot times must be finite and >= 0")));
    }
    let table = sim::read_trace_csv(&trace).map_err(classify)?;
    let out = &a.out.out;
    let files = plotdata::write(&table, &a.times, out).map_err(runtime_err)?;
    let mut manifest = Manifest::new("plotdata", command_line, out, 0);
    manifest.config = Some(trace.display().to_string());
    manifest.add_files(out, &files).map_err(runtime_err)?;
    manifest.write(out).map_err(runtime_err)?;
    let frames = files.iter().filter(|f| f.file_name().is_some_and(|n| n.to_string_lossy().starts_with("frame_"))).count();
    println!("wrote {frames} frame(s) and paths.csv to {}", out.display());
    Ok(())
}

fn cmd_check_grad(a: CheckGradArgs) -> Result<(), Failure> {
    if a.samples == 0 {
        return Err(config_err(anyhow!("--samples must be >= 1")));
    }
    let mut worst: f64 = 0.0;
    for s in 0..a.samples {
        let seed = a.seed.wrapping_add(s as u64);
        let m = 1 + s % 2;
        let n_p = 1 + s % 4;
        let n_s = 5 + s % 6;
        let (ocp, u) = random_problem(seed, m, n_p, n_s);
        let err = gradient_error(&ocp, &u);
        println!("sample {s:3} m={m} n_p={n_p} N_s={n_s:2} max_rel_err={err:.3e}");
        worst = worst.max(err);
    }
    println!("worst relative error {worst:.3e} (tolerance {:.1e})", a.tolerance);
    if worst.is_nan() || worst >= a.tolerance {
        return Err(runtime_err(anyhow!("gradient check failed: {worst:.3e} >= {:.1e}", a.tolerance)));
    }
    Ok(())
}
