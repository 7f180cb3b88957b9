//! Experiment orchestration: configuration ingestion, the consistency sweep,
//! the asymptotic-distribution comparison and the convergence-rate checks,
//! with CSV emission.
//!
//! Reproducibility contract: the CSV bodies are a pure function of the
//! configuration and master seed. Every (cell, replication) derives its own
//! seed, replications run in parallel and are collected in index order, and
//! timestamps live only in the JSON sidecar.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{estimate_lse, EstimationOptions, MeasureModeKind};
use crate::model::{example_model, ExampleB0, ModelSpec, ThetaBox, ThetaPoint};
use crate::rng::derive_seed;
use crate::segment::{Grid, Segment};
use crate::simulator::{simulate_observation, simulate_observation_paths, solve_limit_ode_fine, SimConfig};
use crate::stats::{ks_critical_value, ks_statistic, loglog_slope, mean, median, sample_variance};
use crate::asymptotics;

const ROLE_OBSERVE: u64 = 1;
const ROLE_ESTIMATE: u64 = 2;
const ROLE_LIMIT: u64 = 3;
const ROLE_RATE_EPS: u64 = 4;
const ROLE_RATE_DELTA: u64 = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub name: String,
    #[serde(default = "default_b0")]
    pub b0: String,
}

fn default_b0() -> String {
    "sincos".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    /// Time step; give either this or `horizon`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    /// Horizon `T`; the step is then `T / n_steps`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    pub n_steps: usize,
    pub memory_steps: usize,
    #[serde(default = "default_fine_factor")]
    pub fine_factor: usize,
}

fn default_fine_factor() -> usize {
    8
}

/// Initial segment: constant, or an affine ramp from `value` at `-r0` to
/// `end_value` at time zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum InitialConfig {
    Constant { value: Vec<f64> },
    Ramp { value: Vec<f64>, end_value: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub theta0: Vec<f64>,
    pub theta_box: ThetaBox,
    pub grid: GridConfig,
    pub initial: InitialConfig,
    pub epsilon_list: Vec<f64>,
    /// Matched scaling: per-cell `n = ceil(n_scale / epsilon)`.
    #[serde(default = "default_n_scale")]
    pub n_scale: f64,
    /// Explicit per-cell step counts (overrides `n_scale`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_list: Option<Vec<usize>>,
    #[serde(default = "default_n_particles")]
    pub n_particles: usize,
    pub n_replications: usize,
    #[serde(default = "default_measure_mode")]
    pub measure_mode: MeasureModeKind,
    /// Pilot parameter for ensemble mode; box center when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pilot: Option<Vec<f64>>,
    #[serde(default)]
    pub refine_pass: bool,
    /// Reference sample size for the distribution comparison.
    #[serde(default = "default_limit_samples")]
    pub limit_samples: usize,
    /// Number of grid halvings in the rate check's step sweep.
    #[serde(default = "default_delta_levels")]
    pub delta_levels: usize,
    /// Dispersion used by the rate check's step sweep.
    #[serde(default = "default_rate_epsilon")]
    pub rate_epsilon: f64,
    pub rng_seed: u64,
    pub output_dir: String,
}

fn default_n_scale() -> f64 {
    10.0
}
fn default_n_particles() -> usize {
    256
}
fn default_measure_mode() -> MeasureModeKind {
    MeasureModeKind::Ensemble
}
fn default_limit_samples() -> usize {
    10_000
}
fn default_delta_levels() -> usize {
    3
}
fn default_rate_epsilon() -> f64 {
    0.01
}

impl ExperimentConfig {
    pub fn param_dim(&self) -> usize {
        self.theta0.len()
    }

    /// Horizon implied by the grid block.
    pub fn horizon(&self) -> f64 {
        match (self.grid.delta, self.grid.horizon) {
            (Some(d), _) => d * self.grid.n_steps as f64,
            (None, Some(t)) => t,
            (None, None) => f64::NAN,
        }
    }

    /// The base grid (validated configs never fail here).
    pub fn base_grid(&self) -> Result<Grid> {
        let delta = match (self.grid.delta, self.grid.horizon) {
            (Some(d), _) => d,
            (None, Some(t)) => t / self.grid.n_steps as f64,
            (None, None) => {
                return Err(Error::InvalidConfig(vec![
                    "grid: give exactly one of delta or horizon".into(),
                ]))
            }
        };
        Grid::new(delta, self.grid.n_steps, self.grid.memory_steps)
    }

    /// Grid for a sweep cell with `n` steps: same horizon, the memory ratio
    /// `memory_steps / n_steps` preserved up to rounding (at least one step).
    pub fn cell_grid(&self, n: usize) -> Result<Grid> {
        let t = self.horizon();
        let ratio = self.grid.memory_steps as f64 / self.grid.n_steps as f64;
        let m = ((ratio * n as f64).round() as usize).max(1);
        Grid::new(t / n as f64, n, m)
    }

    /// Per-cell `(epsilon, n)` pairs for the sweep experiments.
    pub fn cells(&self) -> Vec<(f64, usize)> {
        self.epsilon_list
            .iter()
            .enumerate()
            .map(|(i, &eps)| {
                let n = match &self.n_list {
                    Some(ns) => ns[i],
                    None => (self.n_scale / eps).ceil() as usize,
                };
                (eps, n)
            })
            .collect()
    }

    fn estimation_options(&self, seed: u64) -> EstimationOptions {
        EstimationOptions {
            measure_mode: self.measure_mode,
            pilot: self.pilot.clone().map(ThetaPoint::new),
            refine_pass: self.refine_pass,
            n_particles: self.n_particles,
            rng_seed: seed,
            start: None,
        }
    }
}

/// Builds the initial segment on `grid` from the configured shape.
pub fn build_initial_segment(initial: &InitialConfig, grid: &Grid) -> Result<Segment> {
    let m = grid.memory_steps();
    match initial {
        InitialConfig::Constant { value } => Segment::constant(value, m),
        InitialConfig::Ramp { value, end_value } => {
            if value.len() != end_value.len() {
                return Err(Error::InvalidInput("ramp endpoints differ in dimension".into()));
            }
            let d = value.len();
            let mut knots = Vec::with_capacity((m + 1) * d);
            for i in 0..=m {
                let w = i as f64 / m as f64;
                for c in 0..d {
                    knots.push(value[c] + w * (end_value[c] - value[c]));
                }
            }
            Segment::from_knots(d, knots)
        }
    }
}

/// Instantiates the configured model on a concrete grid.
pub fn build_model(cfg: &ExperimentConfig, grid: &Grid) -> Result<ModelSpec> {
    let xi = build_initial_segment(&cfg.initial, grid)?;
    match cfg.model.name.as_str() {
        "example" => {
            let b0 = match cfg.model.b0.as_str() {
                "sincos" => ExampleB0::SinCos,
                "zero" => ExampleB0::Zero,
                "state" => ExampleB0::State,
                other => {
                    return Err(Error::InvalidConfig(vec![format!(
                        "model.b0: unknown kernel '{other}' (expected sincos, zero or state)"
                    )]))
                }
            };
            example_model(b0, cfg.theta_box.clone(), xi)
        }
        other => Err(Error::InvalidConfig(vec![format!(
            "model.name: unknown model '{other}' (expected 'example'; custom models are library-only)"
        )])),
    }
}

/// Parses and validates a JSON configuration, aggregating one message per
/// violated constraint.
pub fn validate_config(raw: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = serde_json::from_str(raw)
        .map_err(|e| Error::InvalidConfig(vec![format!("parse error: {e}")]))?;
    let issues = validate(&cfg);
    if issues.is_empty() {
        Ok(cfg)
    } else {
        Err(Error::InvalidConfig(issues))
    }
}

/// Constraint checks on an already-parsed configuration.
pub fn validate(cfg: &ExperimentConfig) -> Vec<String> {
    let mut issues = Vec::new();
    match (cfg.grid.delta, cfg.grid.horizon) {
        (Some(_), Some(_)) => issues.push("grid: give only one of delta or horizon".into()),
        (None, None) => issues.push("grid: give exactly one of delta or horizon".into()),
        (Some(d), None) if !(d.is_finite() && d > 0.0) => {
            issues.push(format!("grid.delta: must be > 0, got {d}"))
        }
        (None, Some(t)) if !(t.is_finite() && t > 0.0) => {
            issues.push(format!("grid.horizon: must be > 0, got {t}"))
        }
        _ => {}
    }
    if cfg.grid.n_steps < 1 {
        issues.push("grid.n_steps: must be >= 1".into());
    }
    if cfg.grid.memory_steps < 1 {
        issues.push("grid.memory_steps: must be >= 1".into());
    }
    if cfg.grid.fine_factor < 1 {
        issues.push("grid.fine_factor: must be >= 1".into());
    }
    if cfg.epsilon_list.is_empty() {
        issues.push("epsilon_list: must be nonempty".into());
    }
    for (i, eps) in cfg.epsilon_list.iter().enumerate() {
        if !(eps.is_finite() && *eps > 0.0 && *eps < 1.0) {
            issues.push(format!(
                "epsilon_list[{i}]: dispersion must lie in the open interval (0, 1), got {eps}"
            ));
        }
    }
    if !(cfg.rate_epsilon.is_finite() && cfg.rate_epsilon > 0.0 && cfg.rate_epsilon < 1.0) {
        issues.push(format!(
            "rate_epsilon: must lie in (0, 1), got {}",
            cfg.rate_epsilon
        ));
    }
    if let Err(Error::InvalidInput(msg)) =
        ThetaBox::new(cfg.theta_box.lower.clone(), cfg.theta_box.upper.clone())
    {
        issues.push(format!("theta_box: {msg}"));
    }
    if cfg.theta0.len() != cfg.theta_box.lower.len() {
        issues.push(format!(
            "theta0: has dimension {}, theta_box has dimension {}",
            cfg.theta0.len(),
            cfg.theta_box.lower.len()
        ));
    } else if !cfg.theta_box.contains_interior(&cfg.theta0) {
        issues.push(
            "theta0: must lie strictly inside theta_box (the parameter set is open)".into(),
        );
    }
    if let Some(pilot) = &cfg.pilot {
        if pilot.len() != cfg.theta0.len() {
            issues.push("pilot: dimension differs from theta0".into());
        } else if !cfg.theta_box.contains_closed(pilot) {
            issues.push("pilot: must lie in the closed theta_box".into());
        }
    }
    if let Some(ns) = &cfg.n_list {
        if ns.len() != cfg.epsilon_list.len() {
            issues.push("n_list: length must match epsilon_list".into());
        }
        for (i, n) in ns.iter().enumerate() {
            if *n < 1 {
                issues.push(format!("n_list[{i}]: must be >= 1"));
            }
        }
    }
    if !(cfg.n_scale.is_finite() && cfg.n_scale > 0.0) {
        issues.push("n_scale: must be > 0".into());
    }
    if cfg.n_particles < 1 {
        issues.push("n_particles: must be >= 1".into());
    }
    if cfg.n_replications < 1 {
        issues.push("n_replications: must be >= 1".into());
    }
    if cfg.limit_samples < 2 {
        issues.push("limit_samples: must be >= 2".into());
    }
    if cfg.delta_levels < 1 {
        issues.push("delta_levels: must be >= 1".into());
    }
    if cfg.model.name == "example" {
        if !matches!(cfg.model.b0.as_str(), "sincos" | "zero" | "state") {
            issues.push(format!(
                "model.b0: unknown kernel '{}' (expected sincos, zero or state)",
                cfg.model.b0
            ));
        }
        if cfg.theta0.len() != 2 {
            issues.push("theta0: the example model has p = 2".into());
        }
    } else {
        issues.push(format!(
            "model.name: unknown model '{}' (expected 'example')",
            cfg.model.name
        ));
    }
    let d_init = match &cfg.initial {
        InitialConfig::Constant { value } => value.len(),
        InitialConfig::Ramp { value, .. } => value.len(),
    };
    if cfg.model.name == "example" && d_init != 1 {
        issues.push("initial: the example model has d = 1".into());
    }
    issues
}

// ---------------------------------------------------------------------------
// Consistency sweep
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct ConsistencyRecord {
    pub epsilon: f64,
    pub n_steps: usize,
    pub replication: usize,
    /// Estimate projected onto the closed parameter box.
    pub theta_hat: Vec<f64>,
    pub abs_error: f64,
    pub method: String,
    pub converged: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConsistencyCell {
    pub epsilon: f64,
    pub n_steps: usize,
    pub median_abs_error: f64,
    pub bias: Vec<f64>,
    pub rmse: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConsistencyReport {
    pub records: Vec<ConsistencyRecord>,
    pub cells: Vec<ConsistencyCell>,
}

fn run_one_estimate(
    cfg: &ExperimentConfig,
    grid: &Grid,
    epsilon: f64,
    cell: usize,
    replication: usize,
) -> Result<(ThetaPoint, crate::estimator::EstimationResult)> {
    // One model instance per replication keeps the measure-statistic cache
    // private to this simulation.
    let model = build_model(cfg, grid)?;
    let obs_seed = derive_seed(cfg.rng_seed, &[ROLE_OBSERVE, cell as u64, replication as u64]);
    let est_seed = derive_seed(cfg.rng_seed, &[ROLE_ESTIMATE, cell as u64, replication as u64]);
    let sim = SimConfig::new(epsilon, *grid, cfg.n_particles, obs_seed, cfg.grid.fine_factor)?;
    let theta0 = ThetaPoint::new(cfg.theta0.clone());
    let observed = simulate_observation(&model, &sim, &theta0)?;
    let result = estimate_lse(&model, &observed, epsilon, &cfg.estimation_options(est_seed))?;
    let clamped = cfg.theta_box.clamped(&result.theta_hat);
    Ok((clamped, result))
}

/// For each `(epsilon, n)` cell: generate observations at the true
/// parameter, estimate, and record per-replication errors plus per-cell
/// summaries.
pub fn run_consistency(cfg: &ExperimentConfig) -> Result<ConsistencyReport> {
    let theta0 = ThetaPoint::new(cfg.theta0.clone());
    let p = cfg.param_dim();
    let mut records = Vec::new();
    let mut cells = Vec::new();
    for (cell, (eps, n)) in cfg.cells().into_iter().enumerate() {
        let grid = cfg.cell_grid(n)?;
        let cell_records: Vec<ConsistencyRecord> = (0..cfg.n_replications)
            .into_par_iter()
            .map(|rep| {
                let (clamped, result) = run_one_estimate(cfg, &grid, eps, cell, rep)?;
                Ok(ConsistencyRecord {
                    epsilon: eps,
                    n_steps: n,
                    replication: rep,
                    abs_error: clamped.inf_distance(&theta0),
                    theta_hat: clamped.coords,
                    method: result.method.to_string(),
                    converged: result.converged,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let abs_errors: Vec<f64> = cell_records.iter().map(|r| r.abs_error).collect();
        let mut bias = vec![0.0; p];
        let mut rmse = vec![0.0; p];
        for r in &cell_records {
            for j in 0..p {
                let e = r.theta_hat[j] - cfg.theta0[j];
                bias[j] += e;
                rmse[j] += e * e;
            }
        }
        let count = cell_records.len() as f64;
        for j in 0..p {
            bias[j] /= count;
            rmse[j] = (rmse[j] / count).sqrt();
        }
        cells.push(ConsistencyCell {
            epsilon: eps,
            n_steps: n,
            median_abs_error: median(&abs_errors),
            bias,
            rmse,
        });
        records.extend(cell_records);
    }
    Ok(ConsistencyReport { records, cells })
}

// ---------------------------------------------------------------------------
// Asymptotic distribution comparison
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct CoordinateKs {
    pub coordinate: usize,
    pub ks_statistic: f64,
    pub ks_critical_1pct: f64,
    pub empirical_var: f64,
    pub limit_var: f64,
    pub var_rel_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DistributionReport {
    pub epsilon: f64,
    pub n_steps: usize,
    /// `(theta_hat - theta0) / epsilon` per replication (unclamped).
    pub scaled_errors: Vec<Vec<f64>>,
    pub limit_samples: Vec<Vec<f64>>,
    pub per_coordinate: Vec<CoordinateKs>,
}

/// Compares the scaled estimator errors at the smallest configured
/// dispersion against samples of the limiting fluctuation law.
pub fn run_asymptotics(cfg: &ExperimentConfig) -> Result<DistributionReport> {
    let p = cfg.param_dim();
    if p > 3 {
        return Err(Error::InvalidInput(
            "the distribution comparison supports p <= 3".into(),
        ));
    }
    let (cell, (eps, n)) = cfg
        .cells()
        .into_iter()
        .enumerate()
        .min_by(|a, b| a.1 .0.total_cmp(&b.1 .0))
        .expect("validated configs have a nonempty epsilon list");
    let grid = cfg.cell_grid(n)?;
    let theta0 = ThetaPoint::new(cfg.theta0.clone());

    let scaled_errors: Vec<Vec<f64>> = (0..cfg.n_replications)
        .into_par_iter()
        .map(|rep| {
            let (_, result) = run_one_estimate(cfg, &grid, eps, cell, rep)?;
            Ok((0..p)
                .map(|j| (result.theta_hat.coords[j] - cfg.theta0[j]) / eps)
                .collect())
        })
        .collect::<Result<Vec<_>>>()?;

    let model = build_model(cfg, &grid)?;
    let limit = asymptotics::LimitPath::build(&model, &grid, &theta0, cfg.grid.fine_factor)?;
    let limit_seed = derive_seed(cfg.rng_seed, &[ROLE_LIMIT, cell as u64, 0]);
    let reference =
        asymptotics::sample_limit_law(&model, &limit, &theta0, cfg.limit_samples, limit_seed)?;
    let cov_limit = asymptotics::limit_covariance(&model, &limit, &theta0)?;

    let per_coordinate = (0..p)
        .map(|j| {
            let emp: Vec<f64> = scaled_errors.iter().map(|r| r[j]).collect();
            let refs: Vec<f64> = reference.iter().map(|s| s.coords[j]).collect();
            let empirical_var = sample_variance(&emp);
            let limit_var = cov_limit[(j, j)];
            CoordinateKs {
                coordinate: j + 1,
                ks_statistic: ks_statistic(&emp, &refs),
                ks_critical_1pct: ks_critical_value(0.01, emp.len(), refs.len()),
                empirical_var,
                limit_var,
                var_rel_error: (empirical_var - limit_var).abs() / limit_var.abs(),
            }
        })
        .collect();

    Ok(DistributionReport {
        epsilon: eps,
        n_steps: n,
        scaled_errors,
        limit_samples: reference.into_iter().map(|s| s.coords).collect(),
        per_coordinate,
    })
}

// ---------------------------------------------------------------------------
// Convergence-rate checks
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct RateRecord {
    pub sweep: &'static str,
    pub parameter: f64,
    pub replication: usize,
    pub sq_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RateReport {
    pub records: Vec<RateRecord>,
    /// `(epsilon, mean squared final-segment distance to the limit path)`.
    pub epsilon_means: Vec<(f64, f64)>,
    /// `(delta, mean squared final-segment distance of the coarse scheme)`.
    pub delta_means: Vec<(f64, f64)>,
    pub epsilon_slope: f64,
}

/// Small-noise rate: mean squared uniform distance between the fine-grid
/// path and the limit path at the final time, across the dispersion sweep,
/// plus the step-size sweep at fixed small dispersion.
pub fn run_rate_check(cfg: &ExperimentConfig) -> Result<RateReport> {
    if cfg.epsilon_list.len() < 2 {
        return Err(Error::InvalidConfig(vec![
            "epsilon_list: the rate check needs at least two dispersion values for a slope".into(),
        ]));
    }
    let grid = cfg.base_grid()?;
    let theta0 = ThetaPoint::new(cfg.theta0.clone());
    let mut records = Vec::new();

    // Dispersion sweep on the base grid; the limit path is shared.
    let model = build_model(cfg, &grid)?;
    let ode_fine = solve_limit_ode_fine(&model, &grid, &theta0, cfg.grid.fine_factor)?;
    let n_fine = ode_fine.grid().n_steps();
    let ode_final = ode_fine.segment_at(n_fine)?;
    let mut epsilon_means = Vec::new();
    for (cell, &eps) in cfg.epsilon_list.iter().enumerate() {
        let sq_errors: Vec<f64> = (0..cfg.n_replications)
            .into_par_iter()
            .map(|rep| {
                let model = build_model(cfg, &grid)?;
                let seed = derive_seed(cfg.rng_seed, &[ROLE_RATE_EPS, cell as u64, rep as u64]);
                let sim = SimConfig::new(eps, grid, cfg.n_particles, seed, cfg.grid.fine_factor)?;
                let (_, fine) = simulate_observation_paths(&model, &sim, &theta0)?;
                let d = fine.segment_at(n_fine)?.sup_distance(&ode_final)?;
                Ok(d * d)
            })
            .collect::<Result<Vec<_>>>()?;
        for (rep, sq) in sq_errors.iter().enumerate() {
            records.push(RateRecord { sweep: "epsilon", parameter: eps, replication: rep, sq_error: *sq });
        }
        epsilon_means.push((eps, mean(&sq_errors)));
    }
    let epsilon_slope = loglog_slope(
        &epsilon_means.iter().map(|c| c.0).collect::<Vec<_>>(),
        &epsilon_means.iter().map(|c| c.1).collect::<Vec<_>>(),
    );

    // Step sweep: halve delta `delta_levels` times at fixed small epsilon;
    // compare the coarse scheme's final segment against a common reference
    // on the finest level refined further by fine_factor.
    let levels = cfg.delta_levels;
    let ref_grid = Grid::new(
        grid.delta() / (1 << (levels - 1)) as f64,
        grid.n_steps() * (1 << (levels - 1)),
        grid.memory_steps() * (1 << (levels - 1)),
    )?;
    let ref_model = build_model(cfg, &ref_grid)?;
    let reference = solve_limit_ode_fine(&ref_model, &ref_grid, &theta0, cfg.grid.fine_factor)?;
    let ref_final = reference.segment_at(reference.grid().n_steps())?;
    let mut delta_means = Vec::new();
    for level in 0..levels {
        let factor = 1usize << level;
        let level_grid = Grid::new(
            grid.delta() / factor as f64,
            grid.n_steps() * factor,
            grid.memory_steps() * factor,
        )?;
        // Knot spacing of the level relative to the reference segment.
        let upsample = (1usize << (levels - 1 - level)) * cfg.grid.fine_factor;
        // Aggregated sub-increments with a level-independent seed couple all
        // levels to one Brownian path per replication, so the level means
        // differ by the systematic step-size effect rather than by noise.
        let noise_sub = 1usize << (levels - 1 - level);
        let sq_errors: Vec<f64> = (0..cfg.n_replications)
            .into_par_iter()
            .map(|rep| {
                let model = build_model(cfg, &level_grid)?;
                let seed = derive_seed(cfg.rng_seed, &[ROLE_RATE_DELTA, 0, rep as u64]);
                let sim =
                    SimConfig::new(cfg.rate_epsilon, level_grid, cfg.n_particles, seed, 1)?;
                let ens = crate::simulator::simulate_particles_coupled(
                    &model, &sim, &theta0, noise_sub,
                )?;
                let last = ens.particle(0).segment_at(level_grid.n_steps())?;
                let d = last.resample(upsample).sup_distance(&ref_final)?;
                Ok(d * d)
            })
            .collect::<Result<Vec<_>>>()?;
        for (rep, sq) in sq_errors.iter().enumerate() {
            records.push(RateRecord {
                sweep: "delta",
                parameter: level_grid.delta(),
                replication: rep,
                sq_error: *sq,
            });
        }
        delta_means.push((level_grid.delta(), mean(&sq_errors)));
    }

    Ok(RateReport { records, epsilon_means, delta_means, epsilon_slope })
}

// ---------------------------------------------------------------------------
// CSV emission
// ---------------------------------------------------------------------------

fn float_cell(v: f64) -> String {
    // Shortest round-trip decimal form.
    format!("{v}")
}

fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Consistency record and cell-summary headers (stable public schema).
pub fn consistency_headers(p: usize) -> (Vec<String>, Vec<String>) {
    let mut rec = vec!["epsilon".to_string(), "n".to_string(), "replication".to_string()];
    rec.extend((1..=p).map(|j| format!("theta_hat_{j}")));
    rec.extend(["abs_error".to_string(), "method".to_string(), "converged".to_string()]);
    let mut cell = vec!["epsilon".to_string(), "n".to_string(), "median_abs_error".to_string()];
    cell.extend((1..=p).map(|j| format!("bias_{j}")));
    cell.extend((1..=p).map(|j| format!("rmse_{j}")));
    (rec, cell)
}

pub fn write_consistency_csv(
    report: &ConsistencyReport,
    p: usize,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let (rec_header, cell_header) = consistency_headers(p);
    let rec_rows: Vec<Vec<String>> = report
        .records
        .iter()
        .map(|r| {
            let mut row = vec![float_cell(r.epsilon), r.n_steps.to_string(), r.replication.to_string()];
            row.extend(r.theta_hat.iter().map(|v| float_cell(*v)));
            row.push(float_cell(r.abs_error));
            row.push(r.method.clone());
            row.push(r.converged.to_string());
            row
        })
        .collect();
    let cell_rows: Vec<Vec<String>> = report
        .cells
        .iter()
        .map(|c| {
            let mut row = vec![float_cell(c.epsilon), c.n_steps.to_string(), float_cell(c.median_abs_error)];
            row.extend(c.bias.iter().map(|v| float_cell(*v)));
            row.extend(c.rmse.iter().map(|v| float_cell(*v)));
            row
        })
        .collect();
    let records = dir.join("consistency_records.csv");
    let cells = dir.join("consistency_cells.csv");
    write_csv(&records, &rec_header, &rec_rows)?;
    write_csv(&cells, &cell_header, &cell_rows)?;
    Ok(vec![records, cells])
}

pub fn distribution_headers(p: usize) -> (Vec<String>, Vec<String>) {
    let mut samples = vec!["source".to_string(), "index".to_string()];
    samples.extend((1..=p).map(|j| format!("coord_{j}")));
    let stats = vec![
        "coordinate".to_string(),
        "ks_statistic".to_string(),
        "ks_critical_1pct".to_string(),
        "empirical_var".to_string(),
        "limit_var".to_string(),
        "var_rel_error".to_string(),
    ];
    (samples, stats)
}

pub fn write_distribution_csv(
    report: &DistributionReport,
    p: usize,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let (sample_header, stat_header) = distribution_headers(p);
    let mut rows = Vec::with_capacity(report.scaled_errors.len() + report.limit_samples.len());
    for (i, r) in report.scaled_errors.iter().enumerate() {
        let mut row = vec!["empirical".to_string(), i.to_string()];
        row.extend(r.iter().map(|v| float_cell(*v)));
        rows.push(row);
    }
    for (i, r) in report.limit_samples.iter().enumerate() {
        let mut row = vec!["limit".to_string(), i.to_string()];
        row.extend(r.iter().map(|v| float_cell(*v)));
        rows.push(row);
    }
    let stat_rows: Vec<Vec<String>> = report
        .per_coordinate
        .iter()
        .map(|c| {
            vec![
                c.coordinate.to_string(),
                float_cell(c.ks_statistic),
                float_cell(c.ks_critical_1pct),
                float_cell(c.empirical_var),
                float_cell(c.limit_var),
                float_cell(c.var_rel_error),
            ]
        })
        .collect();
    let samples = dir.join("asymptotics_samples.csv");
    let stats_path = dir.join("asymptotics_stats.csv");
    write_csv(&samples, &sample_header, &rows)?;
    write_csv(&stats_path, &stat_header, &stat_rows)?;
    Ok(vec![samples, stats_path])
}

pub fn write_rate_csv(report: &RateReport, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let rec_header: Vec<String> =
        ["sweep", "parameter", "replication", "sq_error"].map(String::from).to_vec();
    let rec_rows: Vec<Vec<String>> = report
        .records
        .iter()
        .map(|r| {
            vec![
                r.sweep.to_string(),
                float_cell(r.parameter),
                r.replication.to_string(),
                float_cell(r.sq_error),
            ]
        })
        .collect();
    let sum_header: Vec<String> = ["sweep", "parameter", "mean_sq_error"].map(String::from).to_vec();
    let mut sum_rows = Vec::new();
    for (eps, m) in &report.epsilon_means {
        sum_rows.push(vec!["epsilon".to_string(), float_cell(*eps), float_cell(*m)]);
    }
    for (delta, m) in &report.delta_means {
        sum_rows.push(vec!["delta".to_string(), float_cell(*delta), float_cell(*m)]);
    }
    let fit_header: Vec<String> = ["quantity", "value"].map(String::from).to_vec();
    let fit_rows = vec![vec!["epsilon_slope".to_string(), float_cell(report.epsilon_slope)]];
    let records = dir.join("rate_records.csv");
    let summary = dir.join("rate_summary.csv");
    let fit = dir.join("rate_fit.csv");
    write_csv(&records, &rec_header, &rec_rows)?;
    write_csv(&summary, &sum_header, &sum_rows)?;
    write_csv(&fit, &fit_header, &fit_rows)?;
    Ok(vec![records, summary, fit])
}

/// Sidecar with the config echo and wall-clock time; the only output file
/// that is not byte-reproducible.
pub fn write_run_metadata(cfg: &ExperimentConfig, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let stamp = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let meta = serde_json::json!({
        "unix_time": stamp,
        "config": cfg,
    });
    let path = dir.join("run_meta.json");
    fs::write(&path, serde_json::to_string_pretty(&meta)?)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn small_config() -> ExperimentConfig {
        ExperimentConfig {
            model: ModelConfig { name: "example".into(), b0: "sincos".into() },
            theta0: vec![1.0, 0.5],
            theta_box: ThetaBox::new(vec![0.0, 0.0], vec![2.0, 2.0]).unwrap(),
            grid: GridConfig {
                delta: None,
                horizon: Some(1.0),
                n_steps: 20,
                memory_steps: 5,
                fine_factor: 2,
            },
            initial: InitialConfig::Constant { value: vec![0.5] },
            epsilon_list: vec![0.2, 0.1],
            n_scale: 4.0,
            n_list: None,
            n_particles: 16,
            n_replications: 6,
            measure_mode: MeasureModeKind::Ensemble,
            pilot: Some(vec![1.0, 0.5]),
            refine_pass: false,
            limit_samples: 200,
            delta_levels: 2,
            rate_epsilon: 0.05,
            rng_seed: 77,
            output_dir: "out".into(),
        }
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = small_config();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back = validate_config(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn validation_rejects_bad_fields_with_specific_messages() {
        let mut cfg = small_config();
        cfg.epsilon_list = vec![1.5];
        cfg.theta0 = vec![0.0, 0.5];
        cfg.grid.memory_steps = 0;
        cfg.model.name = "unknown".into();
        let issues = validate(&cfg);
        assert!(issues.iter().any(|m| m.contains("(0, 1)")), "{issues:?}");
        assert!(issues.iter().any(|m| m.contains("strictly inside")), "{issues:?}");
        assert!(issues.iter().any(|m| m.contains("memory_steps")), "{issues:?}");
        assert!(issues.iter().any(|m| m.contains("unknown model")), "{issues:?}");
    }

    #[test]
    fn boundary_theta0_rejected() {
        let mut cfg = small_config();
        cfg.theta0 = vec![0.0, 0.5];
        let issues = validate(&cfg);
        assert_eq!(issues.len(), 1, "{issues:?}");
    }

    #[test]
    fn cells_follow_matched_scaling() {
        let cfg = small_config();
        // n = ceil(4 / eps).
        assert_eq!(cfg.cells(), vec![(0.2, 20), (0.1, 40)]);
        let g = cfg.cell_grid(40).unwrap();
        assert_eq!(g.n_steps(), 40);
        // ratio 5/20 = 0.25 -> M = 10.
        assert_eq!(g.memory_steps(), 10);
        assert!((g.delta() - 0.025).abs() < 1e-15);
    }

    #[test]
    fn ramp_initial_segment_hits_endpoints() {
        let grid = Grid::new(0.1, 5, 4).unwrap();
        let seg = build_initial_segment(
            &InitialConfig::Ramp { value: vec![-1.0], end_value: vec![1.0] },
            &grid,
        )
        .unwrap();
        assert_eq!(seg.start()[0], -1.0);
        assert_eq!(seg.end()[0], 1.0);
        assert_eq!(seg.n_knots(), 5);
        assert!((seg.knot(2)[0] - 0.0).abs() < 1e-15);
    }

    #[test]
    fn consistency_noiseless_recovers_truth() {
        // Tiny noise and a faithful pilot: abs_error per replication must be
        // small; with the state kernel the data are strongly informative.
        let mut cfg = small_config();
        cfg.epsilon_list = vec![0.005];
        cfg.n_scale = 0.1; // n = 20
        cfg.n_replications = 2;
        let report = run_consistency(&cfg).unwrap();
        assert_eq!(report.records.len(), 2);
        for r in &report.records {
            assert!(r.abs_error < 0.2, "abs error {}", r.abs_error);
            assert_eq!(r.method, "closed_form");
        }
        assert_eq!(report.cells.len(), 1);
    }

    #[test]
    fn consistency_is_deterministic_across_runs_and_threads() {
        let cfg = small_config();
        let a = run_consistency(&cfg).unwrap();
        let b = run_consistency(&cfg).unwrap();
        let serialize = |r: &ConsistencyReport| serde_json::to_string(&r.records).unwrap();
        assert_eq!(serialize(&a), serialize(&b));

        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let c = pool.install(|| run_consistency(&cfg).unwrap());
        assert_eq!(serialize(&a), serialize(&c));
    }

    #[test]
    fn rate_check_runs_and_reports_positive_errors() {
        let mut cfg = small_config();
        cfg.n_replications = 3;
        cfg.epsilon_list = vec![0.2, 0.1];
        let report = run_rate_check(&cfg).unwrap();
        assert_eq!(report.epsilon_means.len(), 2);
        assert_eq!(report.delta_means.len(), 2);
        for (_, m) in report.epsilon_means.iter().chain(&report.delta_means) {
            assert!(*m >= 0.0 && m.is_finite());
        }
        // Smaller dispersion gives smaller deviation from the limit path.
        assert!(report.epsilon_means[1].1 < report.epsilon_means[0].1);
    }

    #[test]
    fn csv_bodies_are_deterministic_and_headers_stable() {
        use std::fs;
        let cfg = small_config();
        let report = run_consistency(&cfg).unwrap();
        let dir1 = tempfile::tempdir().unwrap();
        let dir2 = tempfile::tempdir().unwrap();
        let p1 = write_consistency_csv(&report, 2, dir1.path()).unwrap();
        let report2 = run_consistency(&cfg).unwrap();
        let p2 = write_consistency_csv(&report2, 2, dir2.path()).unwrap();
        for (a, b) in p1.iter().zip(&p2) {
            assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap());
        }
        let first_line = String::from_utf8(fs::read(&p1[0]).unwrap())
            .unwrap()
            .lines()
            .next()
            .unwrap()
            .to_string();
        assert_eq!(
            first_line,
            "epsilon,n,replication,theta_hat_1,theta_hat_2,abs_error,method,converged"
        );
    }

    #[test]
    fn distribution_comparison_smoke() {
        let mut cfg = small_config();
        cfg.n_replications = 8;
        cfg.limit_samples = 64;
        let report = run_asymptotics(&cfg).unwrap();
        assert_eq!(report.epsilon, 0.1);
        assert_eq!(report.scaled_errors.len(), 8);
        assert_eq!(report.limit_samples.len(), 64);
        assert_eq!(report.per_coordinate.len(), 2);
        for c in &report.per_coordinate {
            assert!(c.ks_statistic >= 0.0 && c.ks_statistic <= 1.0);
            assert!(c.limit_var > 0.0);
        }
    }
}
