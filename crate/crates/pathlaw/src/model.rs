//! Model declaration: drift and diffusion coefficients on segment space, the
//! parameter box, the initial segment, plus numeric probes and the built-in
//! scalar interaction model.

use std::sync::{Arc, Mutex};

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::EmpiricalMeasure;
use crate::rng::{next_f64, standard_normal_pair, stream_rng};
use crate::segment::Segment;

/// Drift `b(zeta, mu, theta) -> R^d`.
pub type DriftFn = dyn Fn(&Segment, &EmpiricalMeasure, &DVector<f64>) -> DVector<f64> + Send + Sync;
/// Diffusion `sigma(zeta, mu) -> R^{d x m}`.
pub type DiffusionFn = dyn Fn(&Segment, &EmpiricalMeasure) -> DMatrix<f64> + Send + Sync;
/// Parameter gradient of the drift, `d x p`, row `i` holding `d b_i / d theta_j`.
pub type DriftGradFn = dyn Fn(&Segment, &EmpiricalMeasure, &DVector<f64>) -> DMatrix<f64> + Send + Sync;
/// Second parameter derivative of the transposed drift: `p` blocks, block `k`
/// being the `p x d` matrix `d/d theta_k` of the transposed gradient.
pub type DriftHessFn =
    dyn Fn(&Segment, &EmpiricalMeasure, &DVector<f64>) -> Vec<DMatrix<f64>> + Send + Sync;
/// Theta-free part of an affine drift, `R^d`.
pub type AffineConstFn = dyn Fn(&Segment, &EmpiricalMeasure) -> DVector<f64> + Send + Sync;
/// Linear part of an affine drift, `d x p`.
pub type AffineLinFn = dyn Fn(&Segment, &EmpiricalMeasure) -> DMatrix<f64> + Send + Sync;

/// Problem dimensions: state `d`, driving noise `m`, parameter `p`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub state: usize,
    pub noise: usize,
    pub param: usize,
}

impl Dims {
    pub fn new(state: usize, noise: usize, param: usize) -> Result<Self> {
        if state == 0 || noise == 0 || param == 0 {
            return Err(Error::InvalidInput("all dimensions must be >= 1".into()));
        }
        Ok(Dims { state, noise, param })
    }
}

/// A parameter value in `R^p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaPoint {
    pub coords: Vec<f64>,
}

impl ThetaPoint {
    pub fn new(coords: Vec<f64>) -> Self {
        ThetaPoint { coords }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn as_dvector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.coords)
    }

    pub fn from_dvector(v: &DVector<f64>) -> Self {
        ThetaPoint { coords: v.as_slice().to_vec() }
    }

    /// Max-norm distance to another point.
    pub fn inf_distance(&self, other: &ThetaPoint) -> f64 {
        self.coords
            .iter()
            .zip(&other.coords)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// The open axis-aligned parameter box; bounds are stored closed and
/// membership is queried either on the closure or on the strict interior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ThetaBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::InvalidInput("theta box bounds must have equal nonzero length".into()));
        }
        for (i, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::InvalidInput(format!(
                    "theta box axis {i} needs lower < upper, got [{lo}, {hi}]"
                )));
            }
        }
        Ok(ThetaBox { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn center(&self) -> ThetaPoint {
        ThetaPoint::new(
            self.lower
                .iter()
                .zip(&self.upper)
                .map(|(lo, hi)| 0.5 * (lo + hi))
                .collect(),
        )
    }

    pub fn contains_closed(&self, theta: &[f64]) -> bool {
        theta.len() == self.dim()
            && theta
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(x, (lo, hi))| *lo <= *x && *x <= *hi)
    }

    pub fn contains_interior(&self, theta: &[f64]) -> bool {
        theta.len() == self.dim()
            && theta
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(x, (lo, hi))| *lo < *x && *x < *hi)
    }

    /// Projects onto the closed box, coordinate-wise.
    pub fn clamp(&self, theta: &mut DVector<f64>) {
        for i in 0..theta.len() {
            theta[i] = theta[i].clamp(self.lower[i], self.upper[i]);
        }
    }

    pub fn clamped(&self, theta: &ThetaPoint) -> ThetaPoint {
        let mut v = theta.as_dvector();
        self.clamp(&mut v);
        ThetaPoint::from_dvector(&v)
    }

    pub fn width(&self, axis: usize) -> f64 {
        self.upper[axis] - self.lower[axis]
    }
}

/// Affine-in-theta drift `b(zeta, mu, theta) = constant(zeta, mu) +
/// linear(zeta, mu) * theta`; enables the closed-form least squares solution.
#[derive(Clone)]
pub struct AffineDrift {
    pub constant: Arc<AffineConstFn>,
    pub linear: Arc<AffineLinFn>,
}

/// A path-distribution dependent model: coefficients, parameter box, initial
/// segment and dimensions.
///
/// Drift and diffusion callbacks must be pure; they are invoked concurrently.
#[derive(Clone)]
pub struct ModelSpec {
    drift: Arc<DriftFn>,
    diffusion: Arc<DiffusionFn>,
    drift_grad_theta: Option<Arc<DriftGradFn>>,
    drift_hess_theta: Option<Arc<DriftHessFn>>,
    affine: Option<AffineDrift>,
    theta_box: ThetaBox,
    xi: Segment,
    dims: Dims,
}

impl ModelSpec {
    pub fn new(
        dims: Dims,
        theta_box: ThetaBox,
        xi: Segment,
        drift: Arc<DriftFn>,
        diffusion: Arc<DiffusionFn>,
    ) -> Result<Self> {
        if theta_box.dim() != dims.param {
            return Err(Error::InvalidInput(format!(
                "theta box has dimension {}, model declares p = {}",
                theta_box.dim(),
                dims.param
            )));
        }
        if xi.dim() != dims.state {
            return Err(Error::InvalidInput(format!(
                "initial segment has dimension {}, model declares d = {}",
                xi.dim(),
                dims.state
            )));
        }
        Ok(ModelSpec {
            drift,
            diffusion,
            drift_grad_theta: None,
            drift_hess_theta: None,
            affine: None,
            theta_box,
            xi,
            dims,
        })
    }

    /// Builds the drift (and its analytic derivatives) from affine parts.
    pub fn from_affine(
        dims: Dims,
        theta_box: ThetaBox,
        xi: Segment,
        affine: AffineDrift,
        diffusion: Arc<DiffusionFn>,
    ) -> Result<Self> {
        let c = Arc::clone(&affine.constant);
        let g = Arc::clone(&affine.linear);
        let drift: Arc<DriftFn> =
            Arc::new(move |seg, mu, theta| c(seg, mu) + g(seg, mu) * theta);
        let g2 = Arc::clone(&affine.linear);
        let grad: Arc<DriftGradFn> = Arc::new(move |seg, mu, _| g2(seg, mu));
        let (p, d) = (dims.param, dims.state);
        let hess: Arc<DriftHessFn> =
            Arc::new(move |_, _, _| vec![DMatrix::zeros(p, d); p]);
        let mut spec = ModelSpec::new(dims, theta_box, xi, drift, diffusion)?;
        spec.drift_grad_theta = Some(grad);
        spec.drift_hess_theta = Some(hess);
        spec.affine = Some(affine);
        Ok(spec)
    }

    pub fn with_drift_grad(mut self, grad: Arc<DriftGradFn>) -> Self {
        self.drift_grad_theta = Some(grad);
        self
    }

    pub fn with_drift_hessian(mut self, hess: Arc<DriftHessFn>) -> Self {
        self.drift_hess_theta = Some(hess);
        self
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn theta_box(&self) -> &ThetaBox {
        &self.theta_box
    }

    pub fn xi(&self) -> &Segment {
        &self.xi
    }

    pub fn affine(&self) -> Option<&AffineDrift> {
        self.affine.as_ref()
    }

    pub fn drift(&self, seg: &Segment, mu: &EmpiricalMeasure, theta: &DVector<f64>) -> DVector<f64> {
        (self.drift)(seg, mu, theta)
    }

    pub fn diffusion(&self, seg: &Segment, mu: &EmpiricalMeasure) -> DMatrix<f64> {
        (self.diffusion)(seg, mu)
    }

    /// The inverse of `sigma sigma^*` at `(seg, mu)`, via a symmetric
    /// positive-definite factorisation. Fails with `SingularDiffusion` when
    /// the product is not invertible to working precision (condition number
    /// above `1e12`).
    pub fn sigma_hat(&self, seg: &Segment, mu: &EmpiricalMeasure) -> Result<DMatrix<f64>> {
        let sig = self.diffusion(seg, mu);
        let mut s = &sig * sig.transpose();
        s = (&s + s.transpose()) * 0.5;
        if s.iter().any(|x| !x.is_finite()) {
            return Err(Error::SingularDiffusion("sigma sigma^* is not finite".into()));
        }
        let eig = SymmetricEigen::new(s.clone());
        let lmax = eig.eigenvalues.max();
        let lmin = eig.eigenvalues.min();
        if !(lmin > 0.0) || lmax / lmin > 1e12 {
            return Err(Error::SingularDiffusion(format!(
                "sigma sigma^* eigenvalues in [{lmin:e}, {lmax:e}]"
            )));
        }
        let chol = Cholesky::new(s)
            .ok_or_else(|| Error::SingularDiffusion("Cholesky factorisation failed".into()))?;
        let w = chol.inverse();
        Ok((&w + w.transpose()) * 0.5)
    }

    /// `d x p` parameter gradient of the drift: analytic when supplied,
    /// otherwise central finite differences with step `1e-5 * max(1, |theta_j|)`.
    pub fn grad_theta_drift(
        &self,
        seg: &Segment,
        mu: &EmpiricalMeasure,
        theta: &DVector<f64>,
    ) -> DMatrix<f64> {
        if let Some(g) = &self.drift_grad_theta {
            return g(seg, mu, theta);
        }
        let (d, p) = (self.dims.state, self.dims.param);
        let mut out = DMatrix::zeros(d, p);
        let mut th = theta.clone();
        for j in 0..p {
            let h = 1e-5 * theta[j].abs().max(1.0);
            th[j] = theta[j] + h;
            let plus = self.drift(seg, mu, &th);
            th[j] = theta[j] - h;
            let minus = self.drift(seg, mu, &th);
            th[j] = theta[j];
            for i in 0..d {
                out[(i, j)] = (plus[i] - minus[i]) / (2.0 * h);
            }
        }
        out
    }

    /// Second parameter derivative of the transposed drift: `p` blocks of
    /// `p x d`. Finite-difference fallback differentiates the (possibly
    /// analytic) gradient with step `1e-4 * max(1, |theta_k|)`.
    pub fn drift_hessian(
        &self,
        seg: &Segment,
        mu: &EmpiricalMeasure,
        theta: &DVector<f64>,
    ) -> Vec<DMatrix<f64>> {
        if let Some(hs) = &self.drift_hess_theta {
            return hs(seg, mu, theta);
        }
        let p = self.dims.param;
        let mut th = theta.clone();
        let mut blocks = Vec::with_capacity(p);
        for k in 0..p {
            let h = 1e-4 * theta[k].abs().max(1.0);
            th[k] = theta[k] + h;
            let plus = self.grad_theta_drift(seg, mu, &th).transpose();
            th[k] = theta[k] - h;
            let minus = self.grad_theta_drift(seg, mu, &th).transpose();
            th[k] = theta[k];
            blocks.push((plus - minus) / (2.0 * h));
        }
        blocks
    }
}

/// Memoises one scalar statistic per measure instance; keyed by the measure
/// stamp so repeated coefficient calls within one particle step reuse it.
struct MeasureStatCache {
    slot: Mutex<Option<(u64, f64)>>,
}

impl MeasureStatCache {
    fn new() -> Self {
        MeasureStatCache { slot: Mutex::new(None) }
    }

    fn get(&self, mu: &EmpiricalMeasure, compute: impl FnOnce(&EmpiricalMeasure) -> f64) -> f64 {
        {
            let g = self.slot.lock().unwrap();
            if let Some((stamp, v)) = *g {
                if stamp == mu.stamp() {
                    return v;
                }
            }
        }
        let v = compute(mu);
        *self.slot.lock().unwrap() = Some((mu.stamp(), v));
        v
    }
}

/// Built-in interaction kernels for the scalar model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExampleB0 {
    /// `b0(zeta, zeta') = sin(zeta(-r0)) + cos(zeta'(0))`.
    SinCos,
    /// `b0 == 0`: the drift reduces to `theta_1`.
    Zero,
    /// `b0(zeta, zeta') = zeta'(0)`: interaction through the mean state.
    State,
}

/// Scalar model with drift `theta_1 + theta_2 * int b0(zeta, .) dmu` and
/// diffusion `1 + |zeta(0)|` (d = m = 1, p = 2).
///
/// The named kernels integrate in O(N) per step: the measure average is a
/// statistic of the atoms' endpoint values and is memoised per measure.
pub fn example_model(b0: ExampleB0, theta_box: ThetaBox, xi: Segment) -> Result<ModelSpec> {
    let beta: Arc<dyn Fn(&Segment, &EmpiricalMeasure) -> f64 + Send + Sync> = match b0 {
        ExampleB0::Zero => Arc::new(|_, _| 0.0),
        ExampleB0::SinCos => {
            let cache = MeasureStatCache::new();
            Arc::new(move |seg, mu| {
                let mean_cos =
                    cache.get(mu, |m| m.integrate_scalar(|atom| atom.end()[0].cos()));
                seg.start()[0].sin() + mean_cos
            })
        }
        ExampleB0::State => {
            let cache = MeasureStatCache::new();
            Arc::new(move |_, mu| cache.get(mu, |m| m.integrate_scalar(|atom| atom.end()[0])))
        }
    };
    scalar_interaction_model(beta, theta_box, xi)
}

/// Scalar model as above with a user-supplied interaction kernel
/// `b0(zeta, zeta')`, integrated atom by atom.
pub fn example_model_custom(
    b0: Arc<dyn Fn(&Segment, &Segment) -> f64 + Send + Sync>,
    theta_box: ThetaBox,
    xi: Segment,
) -> Result<ModelSpec> {
    let beta: Arc<dyn Fn(&Segment, &EmpiricalMeasure) -> f64 + Send + Sync> =
        Arc::new(move |seg, mu| mu.integrate_scalar(|atom| b0(seg, atom)));
    scalar_interaction_model(beta, theta_box, xi)
}

fn scalar_interaction_model(
    beta: Arc<dyn Fn(&Segment, &EmpiricalMeasure) -> f64 + Send + Sync>,
    theta_box: ThetaBox,
    xi: Segment,
) -> Result<ModelSpec> {
    let dims = Dims::new(1, 1, 2)?;
    if theta_box.dim() != 2 {
        return Err(Error::InvalidInput("the scalar interaction model has p = 2".into()));
    }
    if xi.dim() != 1 {
        return Err(Error::InvalidInput("the scalar interaction model has d = 1".into()));
    }
    let b = Arc::clone(&beta);
    let affine = AffineDrift {
        constant: Arc::new(|_, _| DVector::zeros(1)),
        linear: Arc::new(move |seg, mu| DMatrix::from_row_slice(1, 2, &[1.0, b(seg, mu)])),
    };
    let diffusion: Arc<DiffusionFn> =
        Arc::new(|seg, _| DMatrix::from_element(1, 1, 1.0 + seg.end()[0].abs()));
    ModelSpec::from_affine(dims, theta_box, xi, affine, diffusion)
}

/// Empirical Lipschitz ratios of the model coefficients over random segment
/// and measure pairs. Advisory: large values flag a model outside the
/// regularity the limit theory assumes, but nothing is rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    /// max |b(z1,mu) - b(z2,mu)| / ||z1 - z2||, over theta samples.
    pub alpha1_hat: f64,
    /// max |b(z,mu) - b(z,nu)| / W2(mu, nu), over theta samples.
    pub alpha2_hat: f64,
    /// max ||sigma(z1,mu) - sigma(z2,mu)|| / ||z1 - z2||.
    pub beta1_hat: f64,
    /// max ||sigma(z,mu) - sigma(z,nu)|| / W2(mu, nu).
    pub beta2_hat: f64,
    /// max ||inv(ss*)(z1,mu) - inv(ss*)(z2,nu)|| / (||z1 - z2|| + W2(mu, nu)).
    pub l1_hat: f64,
    pub n_samples: usize,
}

impl std::fmt::Display for ProbeReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "lipschitz probe over {} samples", self.n_samples)?;
        writeln!(f, "  drift / segment      (alpha1): {:.6}", self.alpha1_hat)?;
        writeln!(f, "  drift / measure      (alpha2): {:.6}", self.alpha2_hat)?;
        writeln!(f, "  diffusion / segment  (beta1) : {:.6}", self.beta1_hat)?;
        writeln!(f, "  diffusion / measure  (beta2) : {:.6}", self.beta2_hat)?;
        write!(f, "  inverse product joint (L1)   : {:.6}", self.l1_hat)
    }
}

/// Samples random segment/measure pairs and records the largest observed
/// Lipschitz ratios of `b`, `sigma` and `(sigma sigma^*)^{-1}`.
pub fn lipschitz_probe(spec: &ModelSpec, n_samples: usize, rng_seed: u64) -> Result<ProbeReport> {
    if n_samples < 2 {
        return Err(Error::InvalidInput("lipschitz probe needs n_samples >= 2".into()));
    }
    let d = spec.dims().state;
    let knots = spec.xi().n_knots();
    let mut rng = stream_rng(rng_seed, 0);

    let random_segment = move |rng: &mut rand_chacha::ChaCha8Rng| {
        let mut values = Vec::with_capacity(knots * d);
        let mut point: Vec<f64> = (0..d).map(|_| standard_normal_pair(rng).0).collect();
        for _ in 0..knots {
            values.extend_from_slice(&point);
            for x in point.iter_mut() {
                *x += 0.4 * standard_normal_pair(rng).0;
            }
        }
        Segment::from_knots(d, values).unwrap()
    };

    let n_atoms = 4;
    let mut report = ProbeReport {
        alpha1_hat: 0.0,
        alpha2_hat: 0.0,
        beta1_hat: 0.0,
        beta2_hat: 0.0,
        l1_hat: 0.0,
        n_samples,
    };
    let p = spec.dims().param;
    for _ in 0..n_samples {
        let theta = DVector::from_iterator(
            p,
            (0..p).map(|j| {
                let u = next_f64(&mut rng);
                spec.theta_box().lower[j] + u * spec.theta_box().width(j)
            }),
        );
        let z1 = random_segment(&mut rng);
        let z2 = random_segment(&mut rng);
        let mu = EmpiricalMeasure::new((0..n_atoms).map(|_| random_segment(&mut rng)).collect())?;
        let nu = EmpiricalMeasure::new((0..n_atoms).map(|_| random_segment(&mut rng)).collect())?;

        let dz = z1.sup_distance(&z2)?;
        let dw = mu.wasserstein2(&nu)?;

        if dz > 1e-9 {
            let db = (spec.drift(&z1, &mu, &theta) - spec.drift(&z2, &mu, &theta)).norm();
            report.alpha1_hat = report.alpha1_hat.max(db / dz);
            let ds = (spec.diffusion(&z1, &mu) - spec.diffusion(&z2, &mu)).norm();
            report.beta1_hat = report.beta1_hat.max(ds / dz);
        }
        if dw > 1e-9 {
            let db = (spec.drift(&z1, &mu, &theta) - spec.drift(&z1, &nu, &theta)).norm();
            report.alpha2_hat = report.alpha2_hat.max(db / dw);
            let ds = (spec.diffusion(&z1, &mu) - spec.diffusion(&z1, &nu)).norm();
            report.beta2_hat = report.beta2_hat.max(ds / dw);
        }
        if dz + dw > 1e-9 {
            if let (Ok(w1), Ok(w2)) = (spec.sigma_hat(&z1, &mu), spec.sigma_hat(&z2, &nu)) {
                report.l1_hat = report.l1_hat.max((w1 - w2).norm() / (dz + dw));
            }
        }
    }
    Ok(report)
}
