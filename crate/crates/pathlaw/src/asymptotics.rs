//! Limit-theory objects along the deterministic small-noise path.
//!
//! With `X0` the solution of the limit equation and `W = inv(sigma sigma^*)`,
//! the module computes, by composite-trapezoid quadrature on the fine grid,
//!
//! ```text
//! mismatch(theta)    = int  L^* W L dt,      L = b(. , theta0) - b(. , theta)
//! information(theta) = int (grad b)^* W (grad b) dt
//! curvature(theta)   = -2 int (hess b^*) o (W L) dt
//! limit_hessian      = curvature + 2 * information
//! ```
//!
//! and samples the limiting estimator fluctuation
//! `inv(I) * int loading(X0_s) dB(s)` with left-point Ito sums, where
//! `loading = (grad b)^* W sigma` is the p x m noise loading.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::measure::EmpiricalMeasure;
use crate::model::{ModelSpec, ThetaPoint};
use crate::rng::{fill_standard_normal, stream_rng};
use crate::segment::{Grid, Segment, TrajectoryRecord};
use crate::simulator::solve_limit_ode_fine;

/// The deterministic limit path on a fine grid, with the point-mass measure
/// at every node cached (the law of a deterministic path is its Dirac mass).
pub struct LimitPath {
    fine: TrajectoryRecord,
    diracs: Vec<EmpiricalMeasure>,
    fine_factor: usize,
}

impl LimitPath {
    pub fn build(
        spec: &ModelSpec,
        grid: &Grid,
        theta0: &ThetaPoint,
        fine_factor: usize,
    ) -> Result<Self> {
        let fine = solve_limit_ode_fine(spec, grid, theta0, fine_factor)?;
        let n = fine.grid().n_steps();
        let diracs = (0..=n)
            .map(|j| Ok(EmpiricalMeasure::dirac(fine.segment_at(j)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(LimitPath { fine, diracs, fine_factor })
    }

    pub fn fine(&self) -> &TrajectoryRecord {
        &self.fine
    }

    pub fn fine_factor(&self) -> usize {
        self.fine_factor
    }

    pub fn n_nodes(&self) -> usize {
        self.fine.grid().n_steps() + 1
    }

    pub fn node_delta(&self) -> f64 {
        self.fine.grid().delta()
    }

    /// Segment and its point-mass law at fine node `j`.
    pub fn at(&self, j: usize) -> (&Segment, &EmpiricalMeasure) {
        (self.diracs[j].atom(0), &self.diracs[j])
    }
}

/// Drift difference `b(seg, mu, theta0) - b(seg, mu, theta)` at a fixed
/// state and measure.
pub fn drift_mismatch(
    spec: &ModelSpec,
    seg: &Segment,
    mu: &EmpiricalMeasure,
    theta: &DVector<f64>,
    theta0: &DVector<f64>,
) -> DVector<f64> {
    spec.drift(seg, mu, theta0) - spec.drift(seg, mu, theta)
}

fn trapezoid<T, F>(limit: &LimitPath, mut integrand: F) -> Result<T>
where
    T: std::ops::AddAssign + std::ops::Mul<f64, Output = T> + Clone,
    F: FnMut(&Segment, &EmpiricalMeasure) -> Result<T>,
{
    let n = limit.n_nodes() - 1;
    let h = limit.node_delta();
    let (seg, mu) = limit.at(0);
    let mut acc = integrand(seg, mu)? * (0.5 * h);
    for j in 1..n {
        let (seg, mu) = limit.at(j);
        acc += integrand(seg, mu)? * h;
    }
    let (seg, mu) = limit.at(n);
    acc += integrand(seg, mu)? * (0.5 * h);
    Ok(acc)
}

/// The scalar mismatch energy `int L^* W L dt` along the limit path;
/// vanishes exactly at `theta = theta0` and is positive elsewhere for
/// identifiable models.
pub fn mismatch_energy(
    spec: &ModelSpec,
    limit: &LimitPath,
    theta: &ThetaPoint,
    theta0: &ThetaPoint,
) -> Result<f64> {
    let th = theta.as_dvector();
    let th0 = theta0.as_dvector();
    trapezoid(limit, |seg, mu| {
        let lam = drift_mismatch(spec, seg, mu, &th, &th0);
        let w = spec.sigma_hat(seg, mu)?;
        Ok((w * &lam).dot(&lam))
    })
}

/// The p x p information-type matrix `int (grad b)^* W (grad b) dt`,
/// symmetrised to remove quadrature roundoff asymmetry.
pub fn information_matrix(
    spec: &ModelSpec,
    limit: &LimitPath,
    theta: &ThetaPoint,
) -> Result<DMatrix<f64>> {
    let th = theta.as_dvector();
    let m = trapezoid(limit, |seg, mu| {
        let g = spec.grad_theta_drift(seg, mu, &th);
        let w = spec.sigma_hat(seg, mu)?;
        Ok(g.transpose() * w * g)
    })?;
    Ok((&m + m.transpose()) * 0.5)
}

/// Contracts the `p` Hessian blocks against a vector: block k times v gives
/// column k of the result.
fn hess_contract(blocks: &[DMatrix<f64>], v: &DVector<f64>) -> DMatrix<f64> {
    let p = blocks.len();
    let mut out = DMatrix::zeros(p, p);
    for (k, block) in blocks.iter().enumerate() {
        out.set_column(k, &(block * v));
    }
    out
}

/// The curvature-mismatch matrix `-2 int (hess b^*) o (W L) dt`; zero at
/// `theta = theta0` because the drift mismatch vanishes there.
pub fn mismatch_curvature(
    spec: &ModelSpec,
    limit: &LimitPath,
    theta: &ThetaPoint,
    theta0: &ThetaPoint,
) -> Result<DMatrix<f64>> {
    let th = theta.as_dvector();
    let th0 = theta0.as_dvector();
    let m = trapezoid(limit, |seg, mu| {
        let lam = drift_mismatch(spec, seg, mu, &th, &th0);
        let w = spec.sigma_hat(seg, mu)?;
        let blocks = spec.drift_hessian(seg, mu, &th);
        Ok(hess_contract(&blocks, &(w * lam)))
    })?;
    Ok(m * (-2.0))
}

/// `curvature + 2 * information`: the limiting Hessian of the scaled
/// contrast difference (equals twice the information at the true value).
pub fn limit_hessian(
    spec: &ModelSpec,
    limit: &LimitPath,
    theta: &ThetaPoint,
    theta0: &ThetaPoint,
) -> Result<DMatrix<f64>> {
    Ok(mismatch_curvature(spec, limit, theta, theta0)?
        + information_matrix(spec, limit, theta)? * 2.0)
}

/// The p x m integrand of the limiting stochastic integral,
/// `(grad b)^* W sigma` at `(seg, mu)`.
pub fn noise_loading(
    spec: &ModelSpec,
    seg: &Segment,
    mu: &EmpiricalMeasure,
    theta0: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    let g = spec.grad_theta_drift(seg, mu, theta0);
    let w = spec.sigma_hat(seg, mu)?;
    Ok(g.transpose() * w * spec.diffusion(seg, mu))
}

fn information_inverse(spec: &ModelSpec, limit: &LimitPath, theta0: &ThetaPoint) -> Result<DMatrix<f64>> {
    let info = information_matrix(spec, limit, theta0)?;
    let eig = SymmetricEigen::new(info.clone());
    let lmax = eig.eigenvalues.max();
    let lmin = eig.eigenvalues.min();
    if !(lmin > 0.0) || lmax / lmin > 1e10 {
        return Err(Error::SingularInformation(format!(
            "information eigenvalues in [{lmin:e}, {lmax:e}]"
        )));
    }
    let chol = Cholesky::new(info)
        .ok_or_else(|| Error::SingularInformation("Cholesky factorisation failed".into()))?;
    Ok(chol.inverse())
}

/// Draws `n_samples` of `inv(I) * sum_j loading_j dB_j` with left-point Ito
/// sums on the fine grid (`dB_j ~ N(0, h I_m)`). Each sample is exactly
/// Gaussian with covariance `inv(I) V inv(I)`, `V = int loading loading^* dt`.
pub fn sample_limit_law(
    spec: &ModelSpec,
    limit: &LimitPath,
    theta0: &ThetaPoint,
    n_samples: usize,
    rng_seed: u64,
) -> Result<Vec<ThetaPoint>> {
    let th0 = theta0.as_dvector();
    let info_inv = information_inverse(spec, limit, theta0)?;
    let n = limit.n_nodes() - 1;
    let loadings = (0..n)
        .map(|j| {
            let (seg, mu) = limit.at(j);
            noise_loading(spec, seg, mu, &th0)
        })
        .collect::<Result<Vec<_>>>()?;
    let m = spec.dims().noise;
    let sqrt_h = limit.node_delta().sqrt();
    let samples: Vec<ThetaPoint> = (0..n_samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(rng_seed, i as u64);
            let mut z = vec![0.0; m];
            let mut acc = DVector::zeros(spec.dims().param);
            for loading in &loadings {
                fill_standard_normal(&mut rng, &mut z);
                let db = DVector::from_iterator(m, z.iter().map(|v| v * sqrt_h));
                acc += loading * db;
            }
            ThetaPoint::from_dvector(&(&info_inv * acc))
        })
        .collect();
    Ok(samples)
}

/// Covariance `inv(I) V inv(I)` of the limiting fluctuation, with
/// `V = int loading loading^* dt` evaluated by quadrature. Kept as a route
/// independent of the Monte Carlo sampler.
pub fn limit_covariance(
    spec: &ModelSpec,
    limit: &LimitPath,
    theta0: &ThetaPoint,
) -> Result<DMatrix<f64>> {
    let th0 = theta0.as_dvector();
    let info_inv = information_inverse(spec, limit, theta0)?;
    let v = trapezoid(limit, |seg, mu| {
        let u = noise_loading(spec, seg, mu, &th0)?;
        Ok(&u * u.transpose())
    })?;
    Ok(&info_inv * v * &info_inv)
}

/// Summary of the limit objects at one parameter value.
#[derive(Debug, Clone, Serialize)]
pub struct AsymptoticReport {
    pub mismatch_energy: f64,
    pub information: Vec<Vec<f64>>,
    pub curvature: Vec<Vec<f64>>,
    pub limit_hessian: Vec<Vec<f64>>,
    pub quadrature_nodes: usize,
    pub quadrature_rule: &'static str,
}

pub fn asymptotic_report(
    spec: &ModelSpec,
    limit: &LimitPath,
    theta: &ThetaPoint,
    theta0: &ThetaPoint,
) -> Result<AsymptoticReport> {
    let info = information_matrix(spec, limit, theta)?;
    let curv = mismatch_curvature(spec, limit, theta, theta0)?;
    let k0 = &curv + &info * 2.0;
    let rows = |m: &DMatrix<f64>| {
        (0..m.nrows())
            .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
            .collect()
    };
    Ok(AsymptoticReport {
        mismatch_energy: mismatch_energy(spec, limit, theta, theta0)?,
        information: rows(&info),
        curvature: rows(&curv),
        limit_hessian: rows(&k0),
        quadrature_nodes: limit.n_nodes(),
        quadrature_rule: "composite trapezoid",
    })
}
