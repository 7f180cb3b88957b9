//! The weighted least-squares contrast and its minimisers.
//!
//! From discrete observations `Y(t_0), ..., Y(t_n)` the contrast is
//!
//! ```text
//! Psi(theta) = eps^-2 delta^-1 sum_k P_k(theta)^* W_{k-1} P_k(theta)
//! P_k(theta) = Y(t_k) - Y(t_{k-1}) - b(S_{k-1}, mu_{k-1}, theta) * delta
//! ```
//!
//! where `S_{k-1}` is the observed window segment, `mu_{k-1}` the measure
//! surrogate for the unknown law at step `k-1`, and `W_{k-1}` the inverse of
//! `sigma sigma^*` there. The estimator is the minimiser over the parameter
//! box: closed form for affine-in-theta drift, simplex search otherwise, with
//! a brute-force grid argmin as a verification oracle.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::EmpiricalMeasure;
use crate::model::{ModelSpec, ThetaPoint};
use crate::nelder_mead::{self, NelderMeadOptions};
use crate::segment::{Segment, TrajectoryRecord};
use crate::simulator::{simulate_particles, SimConfig};

/// How the unknown law at each step is realised at estimation time.
///
/// `Ensemble` re-simulates an interacting ensemble from the known initial
/// segment at a pilot parameter; `Dirac` uses the point mass at the observed
/// segment, which is exact in the small-noise limit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeasureModeKind {
    Ensemble,
    Dirac,
}

impl std::fmt::Display for MeasureModeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MeasureModeKind::Ensemble => write!(f, "ensemble"),
            MeasureModeKind::Dirac => write!(f, "dirac"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateMethod {
    ClosedForm,
    NelderMead,
    Grid,
}

impl std::fmt::Display for EstimateMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EstimateMethod::ClosedForm => write!(f, "closed_form"),
            EstimateMethod::NelderMead => write!(f, "nelder_mead"),
            EstimateMethod::Grid => write!(f, "grid"),
        }
    }
}

/// Result of one estimation run.
#[derive(Debug, Clone, Serialize)]
pub struct EstimationResult {
    pub theta_hat: ThetaPoint,
    pub contrast_value: f64,
    pub method: EstimateMethod,
    pub iterations: usize,
    pub converged: bool,
    /// Whether the reported minimiser lies in the closed parameter box.
    /// Closed-form minimisers are unconstrained and flagged when outside.
    pub inside_box: bool,
}

struct AffineCache {
    /// Theta-free drift part per step, already scaled by delta.
    constants: Vec<DVector<f64>>,
    /// Linear drift part per step, `d x p`, scaled by delta.
    linears: Vec<DMatrix<f64>>,
}

/// Everything fixed once data and measure path are known: observed segments,
/// increments, measure surrogates and the inverse weight matrices.
pub struct ContrastContext {
    spec: ModelSpec,
    epsilon: f64,
    delta: f64,
    n: usize,
    observed: TrajectoryRecord,
    obs_segments: Vec<Segment>,
    increments: Vec<DVector<f64>>,
    measures: Vec<EmpiricalMeasure>,
    lambda_inv: Vec<DMatrix<f64>>,
    affine: Option<AffineCache>,
}

impl ContrastContext {
    /// Builds the context from an explicit measure path `mu_{k-1}`,
    /// `k = 1..=n`. Weight matrices are formed and checked here.
    pub fn from_measure_path(
        spec: &ModelSpec,
        observed: &TrajectoryRecord,
        epsilon: f64,
        measures: Vec<EmpiricalMeasure>,
    ) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(Error::InvalidInput(format!(
                "contrast needs epsilon > 0, got {epsilon}"
            )));
        }
        let n = observed.grid().n_steps();
        let d = observed.dim();
        if d != spec.dims().state {
            return Err(Error::GridMismatch("observation dimension differs from model".into()));
        }
        if measures.len() != n {
            return Err(Error::InvalidInput(format!(
                "need {n} measures (one per step), got {}",
                measures.len()
            )));
        }
        let delta = observed.grid().delta();
        let mut obs_segments = Vec::with_capacity(n);
        let mut increments = Vec::with_capacity(n);
        for k in 1..=n {
            obs_segments.push(observed.segment_at(k - 1)?);
            let prev = observed.observation(k - 1);
            let next = observed.observation(k);
            increments.push(DVector::from_iterator(
                d,
                next.iter().zip(prev).map(|(a, b)| a - b),
            ));
        }
        let lambda_inv = obs_segments
            .iter()
            .zip(&measures)
            .map(|(seg, mu)| spec.sigma_hat(seg, mu))
            .collect::<Result<Vec<_>>>()?;

        let affine = spec.affine().map(|parts| AffineCache {
            constants: obs_segments
                .iter()
                .zip(&measures)
                .map(|(seg, mu)| (parts.constant)(seg, mu) * delta)
                .collect(),
            linears: obs_segments
                .iter()
                .zip(&measures)
                .map(|(seg, mu)| (parts.linear)(seg, mu) * delta)
                .collect(),
        });

        Ok(ContrastContext {
            spec: spec.clone(),
            epsilon,
            delta,
            n,
            observed: observed.clone(),
            obs_segments,
            increments,
            measures,
            lambda_inv,
            affine,
        })
    }

    /// Dirac mode: the measure at step `k-1` is the point mass at the
    /// observed segment there.
    pub fn dirac(spec: &ModelSpec, observed: &TrajectoryRecord, epsilon: f64) -> Result<Self> {
        let n = observed.grid().n_steps();
        let measures = (0..n)
            .map(|k| Ok(EmpiricalMeasure::dirac(observed.segment_at(k)?)))
            .collect::<Result<Vec<_>>>()?;
        Self::from_measure_path(spec, observed, epsilon, measures)
    }

    /// Ensemble mode: re-simulates `n_particles` interacting particles from
    /// the model's initial segment at the pilot parameter and uses their
    /// empirical segment measures.
    pub fn ensemble(
        spec: &ModelSpec,
        observed: &TrajectoryRecord,
        epsilon: f64,
        n_particles: usize,
        pilot: &ThetaPoint,
        rng_seed: u64,
    ) -> Result<Self> {
        let cfg = SimConfig::new(epsilon, *observed.grid(), n_particles, rng_seed, 1)?;
        let ensemble = simulate_particles(spec, &cfg, pilot)?;
        let n = observed.grid().n_steps();
        let measures = (0..n)
            .map(|k| ensemble.measure_at(k))
            .collect::<Result<Vec<_>>>()?;
        Self::from_measure_path(spec, observed, epsilon, measures)
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn n_steps(&self) -> usize {
        self.n
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn observed(&self) -> &TrajectoryRecord {
        &self.observed
    }

    /// Observed window segment at step `k - 1` for `k = 1..=n`.
    pub fn observed_segment(&self, k: usize) -> &Segment {
        &self.obs_segments[k - 1]
    }

    pub fn measure(&self, k: usize) -> &EmpiricalMeasure {
        &self.measures[k - 1]
    }

    pub fn weight(&self, k: usize) -> &DMatrix<f64> {
        &self.lambda_inv[k - 1]
    }

    pub fn increment(&self, k: usize) -> &DVector<f64> {
        &self.increments[k - 1]
    }

    /// One-step residual `P_k(theta)`, `1 <= k <= n`, evaluated through the
    /// model drift (no cached shortcut).
    pub fn residual(&self, k: usize, theta: &DVector<f64>) -> Result<DVector<f64>> {
        if k == 0 || k > self.n {
            return Err(Error::StepOutOfRange { index: k, max: self.n });
        }
        let b = self.spec.drift(&self.obs_segments[k - 1], &self.measures[k - 1], theta);
        Ok(&self.increments[k - 1] - b * self.delta)
    }

    fn residual_fast(&self, k: usize, theta: &DVector<f64>) -> DVector<f64> {
        match &self.affine {
            Some(cache) => {
                &self.increments[k - 1]
                    - &cache.constants[k - 1]
                    - &cache.linears[k - 1] * theta
            }
            None => self
                .residual(k, theta)
                .expect("k validated by caller"),
        }
    }

    /// The contrast `Psi(theta)`; nonnegative by construction.
    pub fn contrast(&self, theta: &DVector<f64>) -> f64 {
        let mut acc = 0.0;
        for k in 1..=self.n {
            let p = self.residual_fast(k, theta);
            acc += (self.lambda_inv[k - 1].clone() * &p).dot(&p);
        }
        acc / (self.epsilon * self.epsilon * self.delta)
    }

    /// The scaled contrast difference `eps^2 (Psi(theta) - Psi(theta0))`.
    pub fn contrast_gap(&self, theta: &DVector<f64>, theta0: &DVector<f64>) -> f64 {
        self.epsilon * self.epsilon * (self.contrast(theta) - self.contrast(theta0))
    }

    /// Normal-equation system of the affine least squares problem (the
    /// common scale `delta^2` is left in; it cancels in the solve).
    fn affine_normal_system(&self) -> Result<(DMatrix<f64>, DVector<f64>)> {
        let cache = self.affine.as_ref().ok_or_else(|| {
            Error::InvalidInput("closed-form estimation needs an affine-in-theta drift".into())
        })?;
        let p = self.spec.dims().param;
        let mut lhs = DMatrix::zeros(p, p);
        let mut rhs = DVector::zeros(p);
        for k in 0..self.n {
            // linears/constants already carry the factor delta.
            let gw = cache.linears[k].transpose() * &self.lambda_inv[k];
            lhs += &gw * &cache.linears[k];
            rhs += gw * (&self.increments[k] - &cache.constants[k]);
        }
        lhs = (&lhs + lhs.transpose()) * 0.5;
        Ok((lhs, rhs))
    }

    /// Exact minimiser of the contrast for affine-in-theta drift, from the
    /// p x p normal equations `(delta sum G^* W G) theta = sum G^* W (dY - c delta)`.
    /// The minimiser is unconstrained; `inside_box` flags whether it landed in
    /// the closed parameter box.
    pub fn estimate_closed_form(&self) -> Result<EstimationResult> {
        let (lhs, rhs) = self.affine_normal_system()?;
        let eig = SymmetricEigen::new(lhs.clone());
        let lmax = eig.eigenvalues.max();
        let lmin = eig.eigenvalues.min();
        if !(lmin > 0.0) || lmin <= 1e-12 * lmax {
            return Err(Error::DegenerateNormalEquations(format!(
                "normal-equation eigenvalues in [{lmin:e}, {lmax:e}]"
            )));
        }
        let chol = Cholesky::new(lhs).ok_or_else(|| {
            Error::DegenerateNormalEquations("Cholesky factorisation failed".into())
        })?;
        let theta = chol.solve(&rhs);
        let inside = self.spec.theta_box().contains_closed(theta.as_slice());
        Ok(EstimationResult {
            contrast_value: self.contrast(&theta),
            theta_hat: ThetaPoint::from_dvector(&theta),
            method: EstimateMethod::ClosedForm,
            iterations: 0,
            converged: true,
            inside_box: inside,
        })
    }

    /// Exact minimiser over the closed parameter box for affine drift.
    ///
    /// When the unconstrained minimiser already lies in the box this is that
    /// point; otherwise every face of the box is enumerated (each coordinate
    /// free or pinned to a bound), the reduced normal equations are solved on
    /// the free coordinates, and the best feasible candidate wins. The
    /// quadratic is convex, so its box minimum lies on one of these faces.
    pub fn estimate_closed_form_boxed(&self) -> Result<EstimationResult> {
        let unconstrained = self.estimate_closed_form()?;
        if unconstrained.inside_box {
            return Ok(unconstrained);
        }
        let (lhs, rhs) = self.affine_normal_system()?;
        let bx = self.spec.theta_box().clone();
        let p = self.spec.dims().param;
        let mut best: Option<(f64, DVector<f64>)> = None;
        // Ternary mask per coordinate: 0 free, 1 lower, 2 upper.
        let total = 3usize.pow(p as u32);
        for mask in 1..total {
            let mut digits = Vec::with_capacity(p);
            let mut rest = mask;
            for _ in 0..p {
                digits.push(rest % 3);
                rest /= 3;
            }
            let free: Vec<usize> = (0..p).filter(|&j| digits[j] == 0).collect();
            let mut theta = DVector::zeros(p);
            for j in 0..p {
                theta[j] = match digits[j] {
                    1 => bx.lower[j],
                    2 => bx.upper[j],
                    _ => 0.0,
                };
            }
            if !free.is_empty() {
                let nf = free.len();
                let mut a_ff = DMatrix::zeros(nf, nf);
                let mut b_f = DVector::zeros(nf);
                for (ri, &i) in free.iter().enumerate() {
                    b_f[ri] = rhs[i];
                    for j in 0..p {
                        if let Some(ci) = free.iter().position(|&f| f == j) {
                            a_ff[(ri, ci)] = lhs[(i, j)];
                        } else {
                            b_f[ri] -= lhs[(i, j)] * theta[j];
                        }
                    }
                }
                match Cholesky::new(a_ff) {
                    Some(chol) => {
                        let x = chol.solve(&b_f);
                        for (ri, &i) in free.iter().enumerate() {
                            theta[i] = x[ri];
                        }
                    }
                    None => continue,
                }
            }
            if !bx.contains_closed(theta.as_slice()) {
                continue;
            }
            let value = self.contrast(&theta);
            if best.as_ref().map_or(true, |(v, _)| value < *v) {
                best = Some((value, theta));
            }
        }
        let (value, theta) = best.ok_or_else(|| {
            Error::DegenerateNormalEquations("no feasible face candidate".into())
        })?;
        Ok(EstimationResult {
            theta_hat: ThetaPoint::from_dvector(&theta),
            contrast_value: value,
            method: EstimateMethod::ClosedForm,
            iterations: 0,
            converged: true,
            inside_box: true,
        })
    }

    /// Simplex minimisation of the contrast over the parameter box. Always
    /// returns the best point; `converged` is false on evaluation-budget
    /// exhaustion.
    pub fn estimate_numeric(&self, start: &ThetaPoint) -> Result<EstimationResult> {
        if !self.spec.theta_box().contains_closed(&start.coords) {
            return Err(Error::InvalidInput("numeric estimation must start inside the box".into()));
        }
        let outcome = nelder_mead::minimize(
            |theta| self.contrast(theta),
            &start.as_dvector(),
            self.spec.theta_box(),
            &NelderMeadOptions::default(),
        );
        Ok(EstimationResult {
            theta_hat: ThetaPoint::from_dvector(&outcome.best),
            contrast_value: outcome.value,
            method: EstimateMethod::NelderMead,
            iterations: outcome.evaluations,
            converged: outcome.converged,
            inside_box: true,
        })
    }

    /// Brute-force argmin over a uniform grid with `resolution` points per
    /// axis; ties resolve to the lexicographically smallest coordinates.
    /// Exhaustive search is only offered for `p <= 3`.
    pub fn grid_oracle(&self, resolution: usize) -> Result<ThetaPoint> {
        let p = self.spec.dims().param;
        if resolution < 2 {
            return Err(Error::InvalidInput("grid resolution must be >= 2".into()));
        }
        if p > 3 {
            return Err(Error::InvalidInput("grid oracle supports p <= 3".into()));
        }
        let bx = self.spec.theta_box();
        let total = resolution.pow(p as u32);
        let point_at = |flat: usize| -> DVector<f64> {
            let mut idx = flat;
            let mut theta = DVector::zeros(p);
            // Coordinate 0 is the most significant digit, so increasing flat
            // index is lexicographic order in coordinates.
            for axis in (0..p).rev() {
                let i = idx % resolution;
                idx /= resolution;
                theta[axis] = bx.lower[axis] + i as f64 * bx.width(axis) / (resolution - 1) as f64;
            }
            theta
        };
        let best = (0..total)
            .into_par_iter()
            .map(|flat| (self.contrast(&point_at(flat)), flat))
            .reduce(
                || (f64::INFINITY, usize::MAX),
                |a, b| {
                    if b.0 < a.0 || (b.0 == a.0 && b.1 < a.1) {
                        b
                    } else {
                        a
                    }
                },
            );
        Ok(ThetaPoint::from_dvector(&point_at(best.1)))
    }
}

/// The scalar interaction model's closed-form least squares solution written
/// as the five data sums
///
/// ```text
/// A1 = sum w_k                A2 = sum w_k dY_k       A3 = sum w_k dY_k beta_k
/// A4 = sum w_k beta_k         A5 = sum w_k beta_k^2
/// theta1 = (A2 A5 - A3 A4) / (delta (A1 A5 - A4^2))
/// theta2 = (A1 A3 - A2 A4) / (delta (A1 A5 - A4^2))
/// ```
///
/// with `w_k` the scalar inverse weight and `beta_k` the interaction average.
/// Kept as an independent code path to cross-check the general normal
/// equations.
pub fn scalar_example_closed_form(ctx: &ContrastContext) -> Result<ThetaPoint> {
    let dims = ctx.spec.dims();
    if dims.state != 1 || dims.param != 2 {
        return Err(Error::InvalidInput("scalar closed form needs d = 1, p = 2".into()));
    }
    let parts = ctx
        .spec
        .affine()
        .ok_or_else(|| Error::InvalidInput("scalar closed form needs an affine drift".into()))?;
    let (mut a1, mut a2, mut a3, mut a4, mut a5) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for k in 1..=ctx.n {
        let w = ctx.weight(k)[(0, 0)];
        let dy = ctx.increment(k)[0];
        let g = (parts.linear)(ctx.observed_segment(k), ctx.measure(k));
        let beta = g[(0, 1)];
        a1 += w;
        a2 += w * dy;
        a3 += w * dy * beta;
        a4 += w * beta;
        a5 += w * beta * beta;
    }
    let det = a1 * a5 - a4 * a4;
    if det.abs() <= 1e-12 * (a1 * a5).abs().max(1e-300) {
        return Err(Error::DegenerateNormalEquations(format!("A1*A5 - A4^2 = {det:e}")));
    }
    let delta = ctx.delta;
    Ok(ThetaPoint::new(vec![
        (a2 * a5 - a3 * a4) / (delta * det),
        (a1 * a3 - a2 * a4) / (delta * det),
    ]))
}

/// Options for one end-to-end estimation.
#[derive(Debug, Clone)]
pub struct EstimationOptions {
    pub measure_mode: MeasureModeKind,
    /// Pilot parameter for ensemble mode; defaults to the box center.
    pub pilot: Option<ThetaPoint>,
    /// Rebuild the measure path once at the first estimate and re-estimate.
    pub refine_pass: bool,
    pub n_particles: usize,
    pub rng_seed: u64,
    /// Start for the simplex search (non-affine drift); defaults to the box
    /// center.
    pub start: Option<ThetaPoint>,
}

impl Default for EstimationOptions {
    fn default() -> Self {
        EstimationOptions {
            measure_mode: MeasureModeKind::Ensemble,
            pilot: None,
            refine_pass: false,
            n_particles: 256,
            rng_seed: 0,
            start: None,
        }
    }
}

/// Builds the contrast context for the requested measure mode.
pub fn build_context(
    spec: &ModelSpec,
    observed: &TrajectoryRecord,
    epsilon: f64,
    opts: &EstimationOptions,
) -> Result<ContrastContext> {
    match opts.measure_mode {
        MeasureModeKind::Dirac => ContrastContext::dirac(spec, observed, epsilon),
        MeasureModeKind::Ensemble => {
            let pilot = opts.pilot.clone().unwrap_or_else(|| spec.theta_box().center());
            ContrastContext::ensemble(spec, observed, epsilon, opts.n_particles, &pilot, opts.rng_seed)
        }
    }
}

/// One estimation: context build, minimisation (closed form when the drift
/// is affine, simplex otherwise) and the optional refinement pass that
/// rebuilds the ensemble measure path at the first estimate.
pub fn estimate_lse(
    spec: &ModelSpec,
    observed: &TrajectoryRecord,
    epsilon: f64,
    opts: &EstimationOptions,
) -> Result<EstimationResult> {
    let ctx = build_context(spec, observed, epsilon, opts)?;
    let first = estimate_in_context(&ctx, opts)?;
    if !(opts.refine_pass && opts.measure_mode == MeasureModeKind::Ensemble) {
        return Ok(first);
    }
    let pilot = spec.theta_box().clamped(&first.theta_hat);
    let refined = EstimationOptions { pilot: Some(pilot), ..opts.clone() };
    let ctx = build_context(spec, observed, epsilon, &refined)?;
    estimate_in_context(&ctx, opts)
}

fn estimate_in_context(ctx: &ContrastContext, opts: &EstimationOptions) -> Result<EstimationResult> {
    if ctx.spec().affine().is_some() {
        ctx.estimate_closed_form()
    } else {
        let start = opts.start.clone().unwrap_or_else(|| ctx.spec().theta_box().center());
        ctx.estimate_numeric(&start)
    }
}
