//! Paths on a uniform grid and their trailing-window segments.
//!
//! A segment is the restriction of a path to the memory window `[-r0, 0]`,
//! stored as its knot values on the grid. The continuous object is the
//! piecewise-linear interpolant through the knots; since that interpolant is
//! affine between knots, the knot values are a lossless representation and
//! the uniform norm over the window equals the maximum over knots.
//!
//! Time is always an integer step count against a single step `delta`, so the
//! identities `T = n * delta` and `r0 = M * delta` hold exactly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform time grid: step `delta`, horizon `n_steps * delta`, memory window
/// `memory_steps * delta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    delta: f64,
    n_steps: usize,
    memory_steps: usize,
}

impl Grid {
    pub fn new(delta: f64, n_steps: usize, memory_steps: usize) -> Result<Self> {
        if !(delta.is_finite() && delta > 0.0) {
            return Err(Error::InvalidInput(format!("grid delta must be > 0, got {delta}")));
        }
        if n_steps < 1 || memory_steps < 1 {
            return Err(Error::InvalidInput(format!(
                "grid needs n_steps >= 1 and memory_steps >= 1, got n={n_steps}, M={memory_steps}"
            )));
        }
        Ok(Grid { delta, n_steps, memory_steps })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn memory_steps(&self) -> usize {
        self.memory_steps
    }

    /// Horizon `T = n * delta`.
    pub fn horizon(&self) -> f64 {
        self.n_steps as f64 * self.delta
    }

    /// Memory length `r0 = M * delta`.
    pub fn memory_length(&self) -> f64 {
        self.memory_steps as f64 * self.delta
    }

    /// Time of step `k` (negative steps reach into the memory window).
    pub fn time(&self, k: i64) -> f64 {
        k as f64 * self.delta
    }

    /// The same span resolved `factor` times finer.
    pub fn refined(&self, factor: usize) -> Result<Grid> {
        if factor < 1 {
            return Err(Error::InvalidInput("refinement factor must be >= 1".into()));
        }
        Grid::new(self.delta / factor as f64, self.n_steps * factor, self.memory_steps * factor)
    }
}

/// A path restricted to the memory window, sampled at `memory_steps + 1`
/// knots; `knot(i)` is the value at time `-r0 + i * delta`.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    dim: usize,
    values: Vec<f64>,
}

impl Segment {
    /// Builds a segment from knot values laid out knot-major
    /// (`values[i * dim..(i + 1) * dim]` is knot `i`).
    pub fn from_knots(dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("segment dimension must be >= 1".into()));
        }
        if values.len() % dim != 0 || values.len() / dim < 2 {
            return Err(Error::InvalidInput(format!(
                "segment needs at least 2 knots of dimension {dim}, got {} values",
                values.len()
            )));
        }
        Ok(Segment { dim, values })
    }

    /// Constant segment equal to `point` at every knot.
    pub fn constant(point: &[f64], memory_steps: usize) -> Result<Self> {
        let mut values = Vec::with_capacity(point.len() * (memory_steps + 1));
        for _ in 0..=memory_steps {
            values.extend_from_slice(point);
        }
        Segment::from_knots(point.len(), values)
    }

    /// Samples a function of time on `[-r0, 0]` at the grid knots.
    pub fn sample(dim: usize, memory_steps: usize, delta: f64, f: impl Fn(f64) -> Vec<f64>) -> Result<Self> {
        let r0 = memory_steps as f64 * delta;
        let mut values = Vec::with_capacity(dim * (memory_steps + 1));
        for i in 0..=memory_steps {
            let t = if i == memory_steps { 0.0 } else { -r0 + i as f64 * delta };
            let v = f(t);
            if v.len() != dim {
                return Err(Error::InvalidInput("sampled point has wrong dimension".into()));
            }
            values.extend_from_slice(&v);
        }
        Segment::from_knots(dim, values)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_knots(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn memory_steps(&self) -> usize {
        self.n_knots() - 1
    }

    pub fn knot(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    /// Value at the far end of the window, `zeta(-r0)`.
    pub fn start(&self) -> &[f64] {
        self.knot(0)
    }

    /// Current value, `zeta(0)`.
    pub fn end(&self) -> &[f64] {
        self.knot(self.n_knots() - 1)
    }

    pub fn knots(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    /// Uniform norm: the maximum Euclidean norm over knots, which equals the
    /// supremum of the piecewise-linear interpolant.
    pub fn sup_norm(&self) -> f64 {
        self.knots()
            .map(|p| p.iter().map(|x| x * x).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    /// Uniform distance to another segment on the same grid.
    pub fn sup_distance(&self, other: &Segment) -> Result<f64> {
        self.check_same_shape(other)?;
        let max = self
            .knots()
            .zip(other.knots())
            .map(|(a, b)| {
                a.iter()
                    .zip(b)
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max);
        Ok(max)
    }

    /// Piecewise-linear resampling onto a grid `factor` times finer. Original
    /// knots are preserved bitwise; inserted knots interpolate affinely, so
    /// the continuous object is unchanged.
    pub fn resample(&self, factor: usize) -> Segment {
        if factor <= 1 {
            return self.clone();
        }
        let m = self.memory_steps();
        let d = self.dim;
        let mut values = Vec::with_capacity((m * factor + 1) * d);
        for i in 0..m {
            let a = self.knot(i);
            let b = self.knot(i + 1);
            values.extend_from_slice(a);
            for j in 1..factor {
                let w = j as f64 / factor as f64;
                for c in 0..d {
                    values.push(a[c] + w * (b[c] - a[c]));
                }
            }
        }
        values.extend_from_slice(self.end());
        Segment { dim: d, values }
    }

    pub(crate) fn check_same_shape(&self, other: &Segment) -> Result<()> {
        if self.dim != other.dim || self.n_knots() != other.n_knots() {
            return Err(Error::GridMismatch(format!(
                "segments differ in shape: {}x{} vs {}x{}",
                self.n_knots(),
                self.dim,
                other.n_knots(),
                other.dim
            )));
        }
        Ok(())
    }

    /// Knot-wise linear combination `self + scale * other` (same grid).
    pub fn axpy(&self, scale: f64, other: &Segment) -> Result<Segment> {
        self.check_same_shape(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + scale * b)
            .collect();
        Ok(Segment { dim: self.dim, values })
    }

    /// Knot-wise shift by a constant point.
    pub fn shifted(&self, offset: &[f64]) -> Result<Segment> {
        if offset.len() != self.dim {
            return Err(Error::InvalidInput("offset dimension mismatch".into()));
        }
        let mut values = self.values.clone();
        for p in values.chunks_exact_mut(self.dim) {
            for (x, o) in p.iter_mut().zip(offset) {
                *x += o;
            }
        }
        Ok(Segment { dim: self.dim, values })
    }
}

/// Discrete observations of one path: the initial segment on `[-r0, 0]` plus
/// the values at the grid times `0, delta, ..., n * delta`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    history: Segment,
    observations: Vec<f64>,
    grid: Grid,
}

impl TrajectoryRecord {
    pub fn new(history: Segment, observations: Vec<f64>, grid: Grid) -> Result<Self> {
        let d = history.dim();
        if history.memory_steps() != grid.memory_steps() {
            return Err(Error::GridMismatch(format!(
                "history has {} memory steps, grid expects {}",
                history.memory_steps(),
                grid.memory_steps()
            )));
        }
        if observations.len() != (grid.n_steps() + 1) * d {
            return Err(Error::InvalidInput(format!(
                "expected {} observation values, got {}",
                (grid.n_steps() + 1) * d,
                observations.len()
            )));
        }
        if observations[..d] != *history.end() {
            return Err(Error::InvalidInput(
                "observations[0] must equal the history value at time 0".into(),
            ));
        }
        Ok(TrajectoryRecord { history, observations, grid })
    }

    pub fn dim(&self) -> usize {
        self.history.dim()
    }

    pub fn grid(&self) -> &Grid {
        self.grid_ref()
    }

    fn grid_ref(&self) -> &Grid {
        &self.grid
    }

    pub fn history(&self) -> &Segment {
        &self.history
    }

    /// Observed value at step `0 <= k <= n`.
    pub fn observation(&self, k: usize) -> &[f64] {
        let d = self.dim();
        &self.observations[k * d..(k + 1) * d]
    }

    pub fn observations(&self) -> &[f64] {
        &self.observations
    }

    /// Path value at step `-M <= j <= n`, reading the history for `j < 0`.
    pub fn value(&self, j: i64) -> Result<&[f64]> {
        let m = self.grid.memory_steps() as i64;
        let n = self.grid.n_steps() as i64;
        if j < -m || j > n {
            return Err(Error::StepOutOfRange {
                index: (j + m) as usize,
                max: (n + m) as usize,
            });
        }
        if j < 0 {
            Ok(self.history.knot((j + m) as usize))
        } else {
            Ok(self.observation(j as usize))
        }
    }

    /// The window segment at step `k`: knots are the stored path values at
    /// steps `k - M ..= k`, exactly — no re-interpolation happens because the
    /// window knots coincide with observation times.
    pub fn segment_at(&self, k: usize) -> Result<Segment> {
        let n = self.grid.n_steps();
        if k > n {
            return Err(Error::StepOutOfRange { index: k, max: n });
        }
        let m = self.grid.memory_steps();
        let d = self.dim();
        let mut values = Vec::with_capacity((m + 1) * d);
        for j in (k as i64 - m as i64)..=(k as i64) {
            values.extend_from_slice(self.value(j).expect("index within validated range"));
        }
        Segment::from_knots(d, values)
    }

    /// Checks the window bound: the uniform norm of the segment at step `k`
    /// never exceeds twice the largest path value seen up to that step.
    pub fn segment_sup_bound_check(&self, k: usize) -> Result<bool> {
        let seg = self.segment_at(k)?;
        let m = self.grid.memory_steps() as i64;
        let mut running = 0.0f64;
        for j in -m..=(k as i64) {
            let p = self.value(j)?;
            let norm = p.iter().map(|x| x * x).sum::<f64>().sqrt();
            running = running.max(norm);
        }
        Ok(seg.sup_norm() <= 2.0 * running)
    }

    /// Keeps every `factor`-th observation, producing the record on the
    /// coarser grid; the history is re-sampled at the coarse knots.
    pub fn subsample(&self, factor: usize) -> Result<TrajectoryRecord> {
        if factor == 0
            || self.grid.n_steps() % factor != 0
            || self.grid.memory_steps() % factor != 0
        {
            return Err(Error::InvalidInput(format!(
                "subsample factor {factor} does not divide the grid"
            )));
        }
        if factor == 1 {
            return Ok(self.clone());
        }
        let d = self.dim();
        let coarse = Grid::new(
            self.grid.delta() * factor as f64,
            self.grid.n_steps() / factor,
            self.grid.memory_steps() / factor,
        )?;
        let mut hist = Vec::with_capacity((coarse.memory_steps() + 1) * d);
        for i in 0..=coarse.memory_steps() {
            hist.extend_from_slice(self.history.knot(i * factor));
        }
        let mut obs = Vec::with_capacity((coarse.n_steps() + 1) * d);
        for k in 0..=coarse.n_steps() {
            obs.extend_from_slice(self.observation(k * factor));
        }
        TrajectoryRecord::new(Segment::from_knots(d, hist)?, obs, coarse)
    }
}
