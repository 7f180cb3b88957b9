//! Data generation: the interacting-particle Euler-Maruyama scheme, a
//! fine-grid proxy for the exact solution, and the deterministic small-noise
//! limit equation.
//!
//! One step of the ensemble updates every particle from the empirical
//! measure of all particle segments at the previous step:
//!
//! ```text
//! Y_i(t_k) = Y_i(t_{k-1}) + b(S_i, mu, theta) * delta
//!            + eps * sigma(S_i, mu) * dB_ik,     dB_ik ~ N(0, delta I_m)
//! ```
//!
//! where `S_i` is particle i's window segment and `mu` the step's empirical
//! measure. Particle `i` draws from RNG stream `i`, so ensembles extend
//! reproducibly and the update is independent of thread count.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::EmpiricalMeasure;
use crate::model::ModelSpec;
use crate::rng::{fill_standard_normal, stream_rng};
use crate::segment::{Grid, Segment, TrajectoryRecord};

/// Simulation parameters. `epsilon = 0` is allowed and produces the
/// deterministic limit dynamics; experiment configs restrict to `(0, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub epsilon: f64,
    pub grid: Grid,
    pub n_particles: usize,
    pub rng_seed: u64,
    /// Observation generation runs on a grid this many times finer.
    pub fine_factor: usize,
}

impl SimConfig {
    pub fn new(epsilon: f64, grid: Grid, n_particles: usize, rng_seed: u64, fine_factor: usize) -> Result<Self> {
        if !(epsilon.is_finite() && (0.0..1.0).contains(&epsilon)) {
            return Err(Error::InvalidInput(format!("epsilon must lie in [0, 1), got {epsilon}")));
        }
        if n_particles < 1 {
            return Err(Error::InvalidInput("n_particles must be >= 1".into()));
        }
        if fine_factor < 1 {
            return Err(Error::InvalidInput("fine_factor must be >= 1".into()));
        }
        Ok(SimConfig { epsilon, grid, n_particles, rng_seed, fine_factor })
    }
}

/// N trajectories evolved in lockstep on one grid from a common initial
/// segment.
#[derive(Debug, Clone)]
pub struct ParticleEnsemble {
    particles: Vec<TrajectoryRecord>,
}

impl ParticleEnsemble {
    pub fn n_particles(&self) -> usize {
        self.particles.len()
    }

    pub fn particle(&self, i: usize) -> &TrajectoryRecord {
        &self.particles[i]
    }

    pub fn particles(&self) -> &[TrajectoryRecord] {
        &self.particles
    }

    pub fn grid(&self) -> &Grid {
        self.particles[0].grid()
    }

    /// Empirical measure of all particle segments at step `k`.
    pub fn measure_at(&self, k: usize) -> Result<EmpiricalMeasure> {
        let atoms = self
            .particles
            .iter()
            .map(|p| p.segment_at(k))
            .collect::<Result<Vec<_>>>()?;
        EmpiricalMeasure::new(atoms)
    }

    pub fn into_particle(mut self, i: usize) -> TrajectoryRecord {
        self.particles.swap_remove(i)
    }
}

/// Raw ensemble paths: `paths[i]` holds particle i's knot values from time
/// `-r0` through `T`, history included.
struct RawPaths {
    dim: usize,
    grid: Grid,
    paths: Vec<Vec<f64>>,
}

impl RawPaths {
    fn into_ensemble(self, history: &Segment) -> Result<ParticleEnsemble> {
        let d = self.dim;
        let m = self.grid.memory_steps();
        let particles = self
            .paths
            .into_iter()
            .map(|path| {
                TrajectoryRecord::new(history.clone(), path[m * d..].to_vec(), self.grid)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ParticleEnsemble { particles })
    }
}

fn run_em(
    spec: &ModelSpec,
    grid: &Grid,
    history: &Segment,
    epsilon: f64,
    n_particles: usize,
    theta: &DVector<f64>,
    seed: u64,
) -> Result<RawPaths> {
    run_em_sub(spec, grid, history, epsilon, n_particles, theta, seed, 1)
}

/// As `run_em`, but each Brownian increment is drawn as the sum of
/// `noise_sub` sub-increments of variance `delta / noise_sub`. Runs with the
/// same `(seed, noise_sub * n_steps)` share one underlying Brownian path per
/// particle, which couples step-size comparisons.
#[allow(clippy::too_many_arguments)]
fn run_em_sub(
    spec: &ModelSpec,
    grid: &Grid,
    history: &Segment,
    epsilon: f64,
    n_particles: usize,
    theta: &DVector<f64>,
    seed: u64,
    noise_sub: usize,
) -> Result<RawPaths> {
    let d = spec.dims().state;
    let m_noise = spec.dims().noise;
    let m = grid.memory_steps();
    let n = grid.n_steps();
    if history.dim() != d || history.memory_steps() != m {
        return Err(Error::GridMismatch(format!(
            "initial segment has {} knots of dim {}, grid needs {} knots of dim {d}",
            history.n_knots(),
            history.dim(),
            m + 1
        )));
    }
    if noise_sub < 1 {
        return Err(Error::InvalidInput("noise_sub must be >= 1".into()));
    }
    let delta = grid.delta();
    let sqrt_sub_delta = (delta / noise_sub as f64).sqrt();

    let mut paths: Vec<Vec<f64>> = (0..n_particles)
        .map(|_| {
            let mut p = Vec::with_capacity((m + n + 1) * d);
            p.extend_from_slice(history.as_slice());
            p
        })
        .collect();
    let mut rngs: Vec<_> = (0..n_particles).map(|i| stream_rng(seed, i as u64)).collect();

    for k in 1..=n {
        let s = k - 1;
        let atoms = paths
            .iter()
            .map(|p| Segment::from_knots(d, p[s * d..(s + m + 1) * d].to_vec()))
            .collect::<Result<Vec<_>>>()?;
        let mu = EmpiricalMeasure::new(atoms)?;

        let increments: Result<Vec<DVector<f64>>> = rngs
            .par_iter_mut()
            .enumerate()
            .with_min_len(32)
            .map(|(i, rng)| {
                let seg = mu.atom(i);
                let b = spec.drift(seg, &mu, theta);
                if b.len() != d {
                    return Err(Error::InvalidInput(format!(
                        "drift returned length {}, expected {d}",
                        b.len()
                    )));
                }
                let sig = spec.diffusion(seg, &mu);
                if sig.nrows() != d || sig.ncols() != m_noise {
                    return Err(Error::InvalidInput(format!(
                        "diffusion returned {}x{}, expected {d}x{m_noise}",
                        sig.nrows(),
                        sig.ncols()
                    )));
                }
                let mut z = vec![0.0; m_noise];
                let mut dw = DVector::zeros(m_noise);
                for _ in 0..noise_sub {
                    fill_standard_normal(rng, &mut z);
                    for (acc, v) in dw.iter_mut().zip(&z) {
                        *acc += v * sqrt_sub_delta;
                    }
                }
                let inc = b * delta + (sig * dw) * epsilon;
                if inc.iter().any(|x| !x.is_finite()) {
                    return Err(Error::NonFinite(format!("particle {i} at step {k}")));
                }
                Ok(inc)
            })
            .collect();
        let increments = increments?;

        for (i, inc) in increments.into_iter().enumerate() {
            let base = paths[i].len() - d;
            for c in 0..d {
                let next = paths[i][base + c] + inc[c];
                if !next.is_finite() {
                    return Err(Error::NonFinite(format!("particle {i} at step {k}")));
                }
                paths[i].push(next);
            }
        }
    }
    Ok(RawPaths { dim: d, grid: *grid, paths })
}

/// Runs the interacting-particle scheme on the configured grid at `theta`.
/// Deterministic given `(seed, spec, cfg, theta)`.
pub fn simulate_particles(
    spec: &ModelSpec,
    cfg: &SimConfig,
    theta: &crate::model::ThetaPoint,
) -> Result<ParticleEnsemble> {
    simulate_particles_coupled(spec, cfg, theta, 1)
}

/// As [`simulate_particles`], drawing each increment as `noise_sub`
/// aggregated sub-increments. Runs whose `n_steps * noise_sub` agree share
/// one Brownian path per particle, so schemes at different step sizes can be
/// compared pathwise (common random numbers).
pub fn simulate_particles_coupled(
    spec: &ModelSpec,
    cfg: &SimConfig,
    theta: &crate::model::ThetaPoint,
    noise_sub: usize,
) -> Result<ParticleEnsemble> {
    let raw = run_em_sub(
        spec,
        &cfg.grid,
        spec.xi(),
        cfg.epsilon,
        cfg.n_particles,
        &theta.as_dvector(),
        cfg.rng_seed,
        noise_sub,
    )?;
    raw.into_ensemble(spec.xi())
}

/// Generates observed data: runs the ensemble on the grid refined by
/// `fine_factor`, takes particle 0 as the observed path, and keeps its values
/// at the coarse times. Returns `(coarse record, fine record)`; the fine
/// record stands in for the exact solution.
pub fn simulate_observation_paths(
    spec: &ModelSpec,
    cfg: &SimConfig,
    theta0: &crate::model::ThetaPoint,
) -> Result<(TrajectoryRecord, TrajectoryRecord)> {
    let fine_grid = cfg.grid.refined(cfg.fine_factor)?;
    let xi_fine = spec.xi().resample(cfg.fine_factor);
    let raw = run_em(
        spec,
        &fine_grid,
        &xi_fine,
        cfg.epsilon,
        cfg.n_particles,
        &theta0.as_dvector(),
        cfg.rng_seed,
    )?;
    let fine = raw.into_ensemble(&xi_fine)?.into_particle(0);
    let coarse = fine.subsample(cfg.fine_factor)?;
    Ok((coarse, fine))
}

/// Observed data on the coarse grid (see [`simulate_observation_paths`]).
pub fn simulate_observation(
    spec: &ModelSpec,
    cfg: &SimConfig,
    theta0: &crate::model::ThetaPoint,
) -> Result<TrajectoryRecord> {
    Ok(simulate_observation_paths(spec, cfg, theta0)?.0)
}

/// Solves the deterministic limit equation `dX = b(X_t, dirac(X_t), theta0) dt`
/// by explicit Euler on the grid refined by `fine_factor`, returning the full
/// fine-grid record. The measure argument is the point mass at the current
/// segment.
pub fn solve_limit_ode_fine(
    spec: &ModelSpec,
    grid: &Grid,
    theta0: &crate::model::ThetaPoint,
    fine_factor: usize,
) -> Result<TrajectoryRecord> {
    let fine_grid = grid.refined(fine_factor)?;
    let xi_fine = spec.xi().resample(fine_factor);
    let raw = run_em(spec, &fine_grid, &xi_fine, 0.0, 1, &theta0.as_dvector(), 0)?;
    Ok(raw.into_ensemble(&xi_fine)?.into_particle(0))
}

/// Limit equation solution sampled back on the coarse grid.
pub fn solve_limit_ode(
    spec: &ModelSpec,
    grid: &Grid,
    theta0: &crate::model::ThetaPoint,
    fine_factor: usize,
) -> Result<TrajectoryRecord> {
    solve_limit_ode_fine(spec, grid, theta0, fine_factor)?.subsample(fine_factor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{example_model, Dims, ExampleB0, ModelSpec, ThetaBox, ThetaPoint};
    use crate::rng::standard_normal_pair;
    use nalgebra::DMatrix;
    use std::sync::Arc;

    fn theta(v: &[f64]) -> ThetaPoint {
        ThetaPoint::new(v.to_vec())
    }

    /// dX = theta dt + eps dB, no path or measure dependence.
    fn linear_model(xi0: f64, memory: usize) -> ModelSpec {
        ModelSpec::new(
            Dims::new(1, 1, 1).unwrap(),
            ThetaBox::new(vec![-5.0], vec![5.0]).unwrap(),
            Segment::constant(&[xi0], memory).unwrap(),
            Arc::new(|_, _, th: &DVector<f64>| DVector::from_element(1, th[0])),
            Arc::new(|_, _| DMatrix::identity(1, 1)),
        )
        .unwrap()
    }

    #[test]
    fn zero_drift_zero_diffusion_is_constant() {
        let spec = ModelSpec::new(
            Dims::new(1, 1, 1).unwrap(),
            ThetaBox::new(vec![0.0], vec![1.0]).unwrap(),
            Segment::constant(&[2.5], 3).unwrap(),
            Arc::new(|_, _, _| DVector::zeros(1)),
            Arc::new(|_, _| DMatrix::zeros(1, 1)),
        )
        .unwrap();
        let grid = Grid::new(0.1, 10, 3).unwrap();
        let cfg = SimConfig::new(0.5, grid, 4, 7, 1).unwrap();
        let ens = simulate_particles(&spec, &cfg, &theta(&[0.7])).unwrap();
        for i in 0..4 {
            for k in 0..=10 {
                assert_eq!(ens.particle(i).observation(k)[0], 2.5);
            }
        }
    }

    #[test]
    fn epsilon_zero_ensemble_equals_limit_ode() {
        // With no noise all particles coincide and reproduce the explicit
        // Euler solution of the limit equation on the same grid, bitwise
        // (particle counts are powers of two so measure averages are exact).
        let bx = ThetaBox::new(vec![0.0, 0.0], vec![2.0, 2.0]).unwrap();
        let xi = Segment::constant(&[0.4], 5).unwrap();
        let spec = example_model(ExampleB0::SinCos, bx, xi).unwrap();
        let grid = Grid::new(0.05, 20, 5).unwrap();
        let cfg = SimConfig::new(0.0, grid, 8, 3, 1).unwrap();
        let t0 = theta(&[1.0, 0.5]);
        let ens = simulate_particles(&spec, &cfg, &t0).unwrap();
        let ode = solve_limit_ode(&spec, &grid, &t0, 1).unwrap();
        for i in 0..cfg.n_particles {
            assert_eq!(ens.particle(i).observations(), ode.observations());
        }
    }

    #[test]
    fn em_recursion_replayed_independently() {
        // Replay Y(t_k) = xi0 + theta*delta*k + eps*sqrt(delta)*sum z_j with
        // the same stream the simulator uses (one Box-Muller pair per step,
        // spare discarded).
        let spec = linear_model(0.3, 2);
        let grid = Grid::new(0.1, 15, 2).unwrap();
        let seed = 99;
        let eps = 0.4;
        let cfg = SimConfig::new(eps, grid, 1, seed, 1).unwrap();
        let ens = simulate_particles(&spec, &cfg, &theta(&[1.0])).unwrap();
        let got = ens.particle(0);

        let mut rng = stream_rng(seed, 0);
        let mut y = 0.3;
        for k in 1..=15 {
            let (z, _) = standard_normal_pair(&mut rng);
            y += 1.0 * 0.1 + eps * 0.1f64.sqrt() * z;
            assert!(
                (got.observation(k)[0] - y).abs() < 1e-14,
                "step {k}: {} vs {y}",
                got.observation(k)[0]
            );
        }
    }

    #[test]
    fn ensemble_mean_matches_linear_drift() {
        // Independent particles: the ensemble mean of Y(T) estimates
        // xi0 + theta*T within three standard errors eps*sqrt(T)/sqrt(N).
        let spec = linear_model(0.0, 2);
        let grid = Grid::new(0.1, 10, 2).unwrap();
        let eps = 0.3;
        let n = 4096;
        let cfg = SimConfig::new(eps, grid, n, 2024, 1).unwrap();
        let ens = simulate_particles(&spec, &cfg, &theta(&[1.0])).unwrap();
        let mean: f64 =
            ens.particles().iter().map(|p| p.observation(10)[0]).sum::<f64>() / n as f64;
        let se = eps * 1.0f64.sqrt() / (n as f64).sqrt();
        assert!((mean - 1.0).abs() < 3.0 * se, "mean {mean}, se {se}");
    }

    #[test]
    fn determinism_and_seed_structure() {
        let bx = ThetaBox::new(vec![0.0, 0.0], vec![2.0, 2.0]).unwrap();
        let xi = Segment::constant(&[0.2], 4).unwrap();
        let spec = example_model(ExampleB0::SinCos, bx.clone(), xi.clone()).unwrap();
        let grid = Grid::new(0.05, 12, 4).unwrap();
        let t0 = theta(&[1.0, 0.5]);

        let cfg = SimConfig::new(0.1, grid, 8, 42, 1).unwrap();
        let a = simulate_particles(&spec, &cfg, &t0).unwrap();
        let b = simulate_particles(&spec, &cfg, &t0).unwrap();
        for i in 0..8 {
            assert_eq!(a.particle(i).observations(), b.particle(i).observations());
        }

        // Interaction couples particles, so enlarging the ensemble changes
        // trajectories; for an interaction-free model the first particles'
        // noise streams are untouched.
        let free = linear_model(0.0, 4);
        let small = SimConfig::new(0.2, grid, 4, 42, 1).unwrap();
        let large = SimConfig::new(0.2, grid, 16, 42, 1).unwrap();
        let s = simulate_particles(&free, &small, &theta(&[0.5])).unwrap();
        let l = simulate_particles(&free, &large, &theta(&[0.5])).unwrap();
        for i in 0..4 {
            assert_eq!(s.particle(i).observations(), l.particle(i).observations());
        }
    }

    #[test]
    fn fine_factor_one_observation_matches_coarse_particle_zero() {
        let bx = ThetaBox::new(vec![0.0, 0.0], vec![2.0, 2.0]).unwrap();
        let xi = Segment::constant(&[0.1], 3).unwrap();
        let spec = example_model(ExampleB0::State, bx, xi).unwrap();
        let grid = Grid::new(0.1, 10, 3).unwrap();
        let cfg = SimConfig::new(0.2, grid, 8, 5, 1).unwrap();
        let obs = simulate_observation(&spec, &cfg, &theta(&[1.0, 0.5])).unwrap();
        let ens = simulate_particles(&spec, &cfg, &theta(&[1.0, 0.5])).unwrap();
        assert_eq!(obs.observations(), ens.particle(0).observations());
    }

    #[test]
    fn noiseless_observation_error_halves_with_refinement() {
        // With eps = 0 the observation is the Euler solution; against a much
        // finer reference the coarse-grid error shrinks roughly linearly.
        let bx = ThetaBox::new(vec![0.0, 0.0], vec![2.0, 2.0]).unwrap();
        let xi = Segment::constant(&[0.4], 4).unwrap();
        let spec = example_model(ExampleB0::SinCos, bx, xi).unwrap();
        let grid = Grid::new(0.125, 8, 4).unwrap();
        let t0 = theta(&[1.0, 0.5]);
        let reference = solve_limit_ode(&spec, &grid, &t0, 64).unwrap();

        let mut errs = Vec::new();
        for f in [1usize, 2, 4] {
            let cfg = SimConfig::new(0.0, grid, 2, 1, f).unwrap();
            let obs = simulate_observation(&spec, &cfg, &t0).unwrap();
            let err: f64 = (0..=8)
                .map(|k| (obs.observation(k)[0] - reference.observation(k)[0]).abs())
                .fold(0.0, f64::max);
            errs.push(err);
        }
        assert!(errs[1] < 0.7 * errs[0], "{errs:?}");
        assert!(errs[2] < 0.7 * errs[1], "{errs:?}");
    }

    #[test]
    fn limit_ode_constant_drift_is_exact() {
        let spec = ModelSpec::new(
            Dims::new(1, 1, 1).unwrap(),
            ThetaBox::new(vec![-5.0], vec![5.0]).unwrap(),
            Segment::constant(&[1.0], 2).unwrap(),
            Arc::new(|_, _, _| DVector::from_element(1, 0.75)),
            Arc::new(|_, _| DMatrix::identity(1, 1)),
        )
        .unwrap();
        let grid = Grid::new(0.25, 8, 2).unwrap();
        let ode = solve_limit_ode(&spec, &grid, &theta(&[0.0]), 4).unwrap();
        for k in 0..=8 {
            let expect = 1.0 + 0.75 * grid.time(k as i64);
            assert!((ode.observation(k)[0] - expect).abs() < 1e-13);
        }
    }

    #[test]
    fn limit_ode_zero_drift_is_constant() {
        let spec = ModelSpec::new(
            Dims::new(1, 1, 1).unwrap(),
            ThetaBox::new(vec![0.0], vec![1.0]).unwrap(),
            Segment::constant(&[0.9], 3).unwrap(),
            Arc::new(|_, _, _| DVector::zeros(1)),
            Arc::new(|_, _| DMatrix::identity(1, 1)),
        )
        .unwrap();
        let grid = Grid::new(0.1, 6, 3).unwrap();
        let ode = solve_limit_ode(&spec, &grid, &theta(&[0.5]), 8).unwrap();
        for k in 0..=6 {
            assert_eq!(ode.observation(k)[0], 0.9);
        }
    }

    #[test]
    fn limit_ode_self_convergence() {
        // The F=16 vs F=32 gap bounds the F=32 vs F=64 error direction;
        // convergence is checked by comparing agreement of successive
        // refinements at the coarse knots.
        let bx = ThetaBox::new(vec![0.0, 0.0], vec![2.0, 2.0]).unwrap();
        let xi = Segment::constant(&[0.4], 4).unwrap();
        let spec = example_model(ExampleB0::SinCos, bx, xi).unwrap();
        let grid = Grid::new(0.25, 4, 4).unwrap();
        let t0 = theta(&[1.0, 0.5]);
        let sol = |f: usize| solve_limit_ode(&spec, &grid, &t0, f).unwrap();
        let (a, b, c) = (sol(16), sol(32), sol(64));
        let gap = |x: &TrajectoryRecord, y: &TrajectoryRecord| -> f64 {
            (0..=4)
                .map(|k| (x.observation(k)[0] - y.observation(k)[0]).abs())
                .fold(0.0, f64::max)
        };
        let g16_32 = gap(&a, &b);
        let g32_64 = gap(&b, &c);
        assert!(g32_64 <= 2.0 * g16_32, "{g16_32} vs {g32_64}");
        assert!(g32_64 < g16_32, "{g16_32} vs {g32_64}");
    }

    #[test]
    fn coupled_noise_shares_the_brownian_path() {
        // Zero drift, unit diffusion: the scheme reproduces the Brownian
        // path at its grid times, so the coarse run with aggregated
        // sub-increments must match the fine run at shared times.
        let spec = ModelSpec::new(
            Dims::new(1, 1, 1).unwrap(),
            ThetaBox::new(vec![0.0], vec![1.0]).unwrap(),
            Segment::constant(&[0.0], 2).unwrap(),
            Arc::new(|_, _, _| DVector::zeros(1)),
            Arc::new(|_, _| DMatrix::identity(1, 1)),
        )
        .unwrap();
        let coarse_grid = Grid::new(0.2, 10, 2).unwrap();
        let fine_grid = Grid::new(0.1, 20, 4).unwrap();
        let spec_fine = ModelSpec::new(
            Dims::new(1, 1, 1).unwrap(),
            ThetaBox::new(vec![0.0], vec![1.0]).unwrap(),
            Segment::constant(&[0.0], 4).unwrap(),
            Arc::new(|_, _, _| DVector::zeros(1)),
            Arc::new(|_, _| DMatrix::identity(1, 1)),
        )
        .unwrap();
        let t = theta(&[0.0]);
        let coarse = simulate_particles_coupled(
            &spec,
            &SimConfig::new(0.5, coarse_grid, 3, 11, 1).unwrap(),
            &t,
            2,
        )
        .unwrap();
        let fine = simulate_particles_coupled(
            &spec_fine,
            &SimConfig::new(0.5, fine_grid, 3, 11, 1).unwrap(),
            &t,
            1,
        )
        .unwrap();
        for i in 0..3 {
            for k in 0..=10 {
                let a = coarse.particle(i).observation(k)[0];
                let b = fine.particle(i).observation(2 * k)[0];
                assert!((a - b).abs() < 1e-12, "particle {i} step {k}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn explosion_reports_non_finite() {
        let spec = ModelSpec::new(
            Dims::new(1, 1, 1).unwrap(),
            ThetaBox::new(vec![0.0], vec![1.0]).unwrap(),
            Segment::constant(&[1.0], 2).unwrap(),
            // Super-linear growth explodes under Euler with this step.
            Arc::new(|seg, _, _| {
                let x = seg.end()[0];
                DVector::from_element(1, x * x * x * 1e6)
            }),
            Arc::new(|_, _| DMatrix::identity(1, 1)),
        )
        .unwrap();
        let grid = Grid::new(0.5, 40, 2).unwrap();
        let cfg = SimConfig::new(0.0, grid, 1, 1, 1).unwrap();
        let res = simulate_particles(&spec, &cfg, &theta(&[0.5]));
        assert!(matches!(res, Err(Error::NonFinite(_))));
    }
}
