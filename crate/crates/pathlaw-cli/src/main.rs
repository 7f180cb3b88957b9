//! Command-line front end: data simulation, estimation, experiment suites
//! and the model regularity probe.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical failure
//! (singular diffusion/information, non-finite states, degenerate normal
//! equations), 4 estimator did not converge.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use pathlaw::error::Error;
use pathlaw::estimator::{estimate_lse, MeasureModeKind};
use pathlaw::experiments::{
    self, build_model, validate_config, ExperimentConfig,
};
use pathlaw::model::{lipschitz_probe, ThetaPoint};
use pathlaw::segment::{Segment, TrajectoryRecord};
use pathlaw::simulator::{simulate_observation, SimConfig};

#[derive(Parser)]
#[command(
    name = "pathlaw",
    about = "Simulation and drift estimation for path-distribution dependent stochastic delay equations",
    version
)]
struct Cli {
    /// JSON experiment configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory override.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker thread count (results are thread-count independent).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Measure-mode override: ensemble or dirac.
    #[arg(long, global = true, value_parser = parse_measure_mode)]
    measure_mode: Option<MeasureModeKind>,
    #[command(subcommand)]
    command: Command,
}

fn parse_measure_mode(s: &str) -> Result<MeasureModeKind, String> {
    match s {
        "ensemble" => Ok(MeasureModeKind::Ensemble),
        "dirac" => Ok(MeasureModeKind::Dirac),
        other => Err(format!("unknown measure mode '{other}' (expected ensemble or dirac)")),
    }
}

#[derive(Subcommand)]
enum Command {
    /// Emit one observed trajectory as CSV (first epsilon in the list).
    Simulate,
    /// Estimate the drift parameter from a trajectory CSV.
    Estimate {
        #[arg(long)]
        trajectory: PathBuf,
    },
    /// Run a full experiment and write its CSV outputs.
    Experiment {
        #[command(subcommand)]
        kind: ExperimentKind,
    },
    /// Empirical Lipschitz-ratio report for the configured model.
    Probe {
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
    },
}

#[derive(Subcommand)]
enum ExperimentKind {
    Consistency,
    Asymptotics,
    Rate,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(k) = cli.threads {
        // Only effective once; later calls would error, so set it up front.
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k).build_global() {
            eprintln!("warning: thread pool already initialised: {e}");
        }
    }
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}

fn exit_code_for(e: &Error) -> ExitCode {
    match e {
        Error::InvalidConfig(_) => ExitCode::from(2),
        Error::SingularDiffusion(_)
        | Error::SingularInformation(_)
        | Error::NonFinite(_)
        | Error::DegenerateNormalEquations(_) => ExitCode::from(3),
        _ => ExitCode::from(1),
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Error> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig(vec!["--config <path> is required".into()]))?;
    let raw = std::fs::read_to_string(path).map_err(|e| {
        Error::InvalidConfig(vec![format!("cannot read config {}: {e}", path.display())])
    })?;
    let mut cfg = validate_config(&raw)?;
    if let Some(seed) = cli.seed {
        cfg.rng_seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.display().to_string();
    }
    if let Some(mode) = cli.measure_mode {
        cfg.measure_mode = mode;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<ExitCode, Error> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Simulate => simulate_cmd(&cfg),
        Command::Estimate { trajectory } => estimate_cmd(&cfg, trajectory),
        Command::Experiment { kind } => experiment_cmd(&cfg, kind),
        Command::Probe { samples } => probe_cmd(&cfg, *samples),
    }
}

fn simulate_cmd(cfg: &ExperimentConfig) -> Result<ExitCode, Error> {
    let grid = cfg.base_grid()?;
    let model = build_model(cfg, &grid)?;
    let eps = cfg.epsilon_list[0];
    let sim = SimConfig::new(eps, grid, cfg.n_particles, cfg.rng_seed, cfg.grid.fine_factor)?;
    let observed = simulate_observation(&model, &sim, &ThetaPoint::new(cfg.theta0.clone()))?;

    let dir = PathBuf::from(&cfg.output_dir);
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("trajectory.csv");
    write_trajectory_csv(&observed, &path)?;
    experiments::write_run_metadata(cfg, &dir)?;
    println!("wrote {}", path.display());
    Ok(ExitCode::SUCCESS)
}

fn write_trajectory_csv(traj: &TrajectoryRecord, path: &Path) -> Result<(), Error> {
    let d = traj.dim();
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["step".to_string(), "time".to_string()];
    header.extend((1..=d).map(|c| format!("y_{c}")));
    w.write_record(&header)?;
    let m = traj.grid().memory_steps() as i64;
    let n = traj.grid().n_steps() as i64;
    for j in -m..=n {
        let mut row = vec![j.to_string(), format!("{}", traj.grid().time(j))];
        row.extend(traj.value(j)?.iter().map(|v| format!("{v}")));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn read_trajectory_csv(cfg: &ExperimentConfig, path: &Path) -> Result<TrajectoryRecord, Error> {
    let grid = cfg.base_grid()?;
    let mut rdr = csv::Reader::from_path(path)?;
    let d = rdr.headers()?.len().saturating_sub(2);
    if d == 0 {
        return Err(Error::InvalidInput("trajectory CSV needs step,time,y_1.. columns".into()));
    }
    let m = grid.memory_steps() as i64;
    let n = grid.n_steps() as i64;
    let mut rows: Vec<(i64, Vec<f64>)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let step: i64 = rec[0]
            .parse()
            .map_err(|e| Error::InvalidInput(format!("bad step field: {e}")))?;
        let vals = (2..rec.len())
            .map(|i| {
                rec[i]
                    .parse::<f64>()
                    .map_err(|e| Error::InvalidInput(format!("bad value field: {e}")))
            })
            .collect::<Result<Vec<f64>, Error>>()?;
        rows.push((step, vals));
    }
    rows.sort_by_key(|r| r.0);
    let expected = (m + n + 1) as usize;
    if rows.len() != expected || rows[0].0 != -m || rows[rows.len() - 1].0 != n {
        return Err(Error::InvalidInput(format!(
            "trajectory has {} rows for steps {}..{}, config grid expects steps {}..{}",
            rows.len(),
            rows.first().map(|r| r.0).unwrap_or(0),
            rows.last().map(|r| r.0).unwrap_or(0),
            -m,
            n
        )));
    }
    let mut history = Vec::new();
    for (_, vals) in rows.iter().take(m as usize + 1) {
        history.extend_from_slice(vals);
    }
    let mut obs = Vec::new();
    for (_, vals) in rows.iter().skip(m as usize) {
        obs.extend_from_slice(vals);
    }
    TrajectoryRecord::new(Segment::from_knots(d, history)?, obs, grid)
}

fn estimate_cmd(cfg: &ExperimentConfig, trajectory: &Path) -> Result<ExitCode, Error> {
    let grid = cfg.base_grid()?;
    let model = build_model(cfg, &grid)?;
    let observed = read_trajectory_csv(cfg, trajectory)?;
    let eps = cfg.epsilon_list[0];
    let opts = pathlaw::estimator::EstimationOptions {
        measure_mode: cfg.measure_mode,
        pilot: cfg.pilot.clone().map(ThetaPoint::new),
        refine_pass: cfg.refine_pass,
        n_particles: cfg.n_particles,
        rng_seed: cfg.rng_seed,
        start: None,
    };
    let res = estimate_lse(&model, &observed, eps, &opts)?;
    println!(
        "theta_hat = [{}]",
        res.theta_hat
            .coords
            .iter()
            .map(|v| format!("{v}"))
            .collect::<Vec<_>>()
            .join(", ")
    );
    println!("contrast = {}", res.contrast_value);
    println!("method = {}", res.method);
    println!("converged = {}", res.converged);
    println!("inside_box = {}", res.inside_box);
    if res.converged {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::from(4))
    }
}

fn experiment_cmd(cfg: &ExperimentConfig, kind: &ExperimentKind) -> Result<ExitCode, Error> {
    let dir = PathBuf::from(&cfg.output_dir);
    let written = match kind {
        ExperimentKind::Consistency => {
            let report = experiments::run_consistency(cfg)?;
            for cell in &report.cells {
                println!(
                    "epsilon {:>8} n {:>6}: median |error|_inf = {:.6}",
                    cell.epsilon, cell.n_steps, cell.median_abs_error
                );
            }
            experiments::write_consistency_csv(&report, cfg.param_dim(), &dir)?
        }
        ExperimentKind::Asymptotics => {
            let report = experiments::run_asymptotics(cfg)?;
            for c in &report.per_coordinate {
                println!(
                    "coordinate {}: KS = {:.4} (1% critical {:.4}), var rel. err. = {:.3}",
                    c.coordinate, c.ks_statistic, c.ks_critical_1pct, c.var_rel_error
                );
            }
            experiments::write_distribution_csv(&report, cfg.param_dim(), &dir)?
        }
        ExperimentKind::Rate => {
            let report = experiments::run_rate_check(cfg)?;
            println!("epsilon sweep log-log slope = {:.4}", report.epsilon_slope);
            for (delta, m) in &report.delta_means {
                println!("delta {delta:>10}: mean sq. error = {m:.6e}");
            }
            experiments::write_rate_csv(&report, &dir)?
        }
    };
    experiments::write_run_metadata(cfg, &dir)?;
    for p in written {
        println!("wrote {}", p.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn probe_cmd(cfg: &ExperimentConfig, samples: usize) -> Result<ExitCode, Error> {
    let grid = cfg.base_grid()?;
    let model = build_model(cfg, &grid)?;
    let report = lipschitz_probe(&model, samples, cfg.rng_seed)?;
    println!("{report}");
    Ok(ExitCode::SUCCESS)
}
