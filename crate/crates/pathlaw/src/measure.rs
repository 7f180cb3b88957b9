//! Equal-weight empirical measures on segment space.
//!
//! An `EmpiricalMeasure` is a uniform probability measure over `N` segments
//! sharing one grid. It stands in for a law on path space wherever one of
//! the model coefficients takes a measure argument.

use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::DVector;

use crate::assignment::min_cost_assignment;
use crate::error::{Error, Result};
use crate::segment::Segment;

static NEXT_STAMP: AtomicU64 = AtomicU64::new(0);

/// Uniform measure over `n_atoms` segments (weight `1/N` each).
///
/// Immutable after construction. Every instance carries a process-unique
/// `stamp`, which lets model coefficients memoise per-measure statistics.
#[derive(Debug, Clone)]
pub struct EmpiricalMeasure {
    atoms: Vec<Segment>,
    stamp: u64,
}

impl EmpiricalMeasure {
    pub fn new(atoms: Vec<Segment>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::InvalidInput("empirical measure needs at least one atom".into()));
        }
        for a in &atoms[1..] {
            atoms[0].check_same_shape(a)?;
        }
        Ok(EmpiricalMeasure { atoms, stamp: NEXT_STAMP.fetch_add(1, Ordering::Relaxed) })
    }

    /// Point mass at a single segment.
    pub fn dirac(atom: Segment) -> Self {
        EmpiricalMeasure { atoms: vec![atom], stamp: NEXT_STAMP.fetch_add(1, Ordering::Relaxed) }
    }

    pub fn n_atoms(&self) -> usize {
        self.atoms.len()
    }

    pub fn atom(&self, i: usize) -> &Segment {
        &self.atoms[i]
    }

    pub fn atoms(&self) -> &[Segment] {
        &self.atoms
    }

    /// Process-unique identifier of this instance (clones keep the stamp;
    /// they are value-identical, so memoised statistics stay valid).
    pub fn stamp(&self) -> u64 {
        self.stamp
    }

    /// Mean of a scalar functional over the atoms.
    ///
    /// The sum is taken pairwise in a fixed order, so the result does not
    /// depend on evaluation parallelism, and the mean of identical values is
    /// exact whenever `N` is a power of two.
    pub fn integrate_scalar(&self, f: impl Fn(&Segment) -> f64) -> f64 {
        pairwise_sum(0, self.atoms.len(), &|i| f(&self.atoms[i])) / self.atoms.len() as f64
    }

    /// Mean of a vector functional over the atoms, `(1/N) sum_i f(atom_i)`.
    pub fn integrate(&self, f: impl Fn(&Segment) -> DVector<f64>) -> DVector<f64> {
        let mut acc = pairwise_sum_vec(0, self.atoms.len(), &|i| f(&self.atoms[i]));
        acc /= self.atoms.len() as f64;
        acc
    }

    /// `(1/N) sum_i ||atom_i||_inf^2`.
    pub fn second_moment(&self) -> f64 {
        self.integrate_scalar(|s| {
            let v = s.sup_norm();
            v * v
        })
    }

    /// Exact Wasserstein-2 distance between two same-size empirical measures
    /// under the segment uniform norm: the cost matrix of squared distances
    /// is solved by an exact assignment, which for equal weights realises the
    /// Kantorovich optimum.
    pub fn wasserstein2(&self, other: &EmpiricalMeasure) -> Result<f64> {
        if self.n_atoms() != other.n_atoms() {
            return Err(Error::GridMismatch(format!(
                "wasserstein2 needs equal atom counts, got {} and {}",
                self.n_atoms(),
                other.n_atoms()
            )));
        }
        self.atoms[0].check_same_shape(&other.atoms[0])?;
        let n = self.n_atoms();
        let mut cost = vec![0.0f64; n * n];
        for i in 0..n {
            for j in 0..n {
                let d = self.atoms[i].sup_distance(&other.atoms[j])?;
                cost[i * n + j] = d * d;
            }
        }
        let assign = min_cost_assignment(&cost, n);
        let total: f64 = assign.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum();
        Ok((total / n as f64).sqrt())
    }
}

fn pairwise_sum(lo: usize, hi: usize, f: &impl Fn(usize) -> f64) -> f64 {
    match hi - lo {
        0 => 0.0,
        1 => f(lo),
        2 => f(lo) + f(lo + 1),
        len => {
            let mid = lo + len / 2;
            pairwise_sum(lo, mid, f) + pairwise_sum(mid, hi, f)
        }
    }
}

fn pairwise_sum_vec(lo: usize, hi: usize, f: &impl Fn(usize) -> DVector<f64>) -> DVector<f64> {
    match hi - lo {
        0 => unreachable!("measures are non-empty"),
        1 => f(lo),
        2 => f(lo) + f(lo + 1),
        len => {
            let mid = lo + len / 2;
            pairwise_sum_vec(lo, mid, f) + pairwise_sum_vec(mid, hi, f)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{next_f64, stream_rng};

    fn random_segment(rng: &mut rand_chacha::ChaCha8Rng, knots: usize) -> Segment {
        let mut values = Vec::with_capacity(knots);
        let mut x = 2.0 * next_f64(rng) - 1.0;
        for _ in 0..knots {
            values.push(x);
            x += 0.6 * (next_f64(rng) - 0.5);
        }
        Segment::from_knots(1, values).unwrap()
    }

    fn random_measure(rng: &mut rand_chacha::ChaCha8Rng, n: usize, knots: usize) -> EmpiricalMeasure {
        EmpiricalMeasure::new((0..n).map(|_| random_segment(rng, knots)).collect()).unwrap()
    }

    #[test]
    fn integrate_normalisation_and_dirac() {
        let mut rng = stream_rng(21, 0);
        let mu = random_measure(&mut rng, 5, 4);
        assert_eq!(mu.integrate_scalar(|_| 1.0), 1.0);
        let z = random_segment(&mut rng, 4);
        let dirac = EmpiricalMeasure::dirac(z.clone());
        assert_eq!(dirac.integrate_scalar(|s| s.end()[0]), z.end()[0]);
    }

    #[test]
    fn integrate_arithmetic_mean() {
        let atoms = [1.0, 2.0, 3.0]
            .iter()
            .map(|&c| Segment::constant(&[c], 2).unwrap())
            .collect();
        let mu = EmpiricalMeasure::new(atoms).unwrap();
        assert_eq!(mu.integrate_scalar(|s| s.end()[0]), 2.0);
    }

    #[test]
    fn integrate_is_linear() {
        let mut rng = stream_rng(22, 0);
        let mu = random_measure(&mut rng, 7, 5);
        let f = |s: &Segment| s.end()[0];
        let g = |s: &Segment| s.start()[0] * s.start()[0];
        let lhs = mu.integrate_scalar(|s| 3.5 * f(s) + g(s));
        let rhs = 3.5 * mu.integrate_scalar(f) + mu.integrate_scalar(g);
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn second_moment_values() {
        let zero = EmpiricalMeasure::dirac(Segment::constant(&[0.0], 2).unwrap());
        assert_eq!(zero.second_moment(), 0.0);
        let atoms = vec![
            Segment::from_knots(1, vec![0.0, 1.0]).unwrap(),
            Segment::from_knots(1, vec![-3.0, 0.5]).unwrap(),
        ];
        let mu = EmpiricalMeasure::new(atoms).unwrap();
        assert_eq!(mu.second_moment(), 5.0);
        let c = EmpiricalMeasure::dirac(Segment::constant(&[1.5], 3).unwrap());
        assert_eq!(c.second_moment(), 2.25);
    }

    #[test]
    fn wasserstein_identity_and_single_atoms() {
        let mut rng = stream_rng(23, 0);
        let mu = random_measure(&mut rng, 4, 5);
        assert_eq!(mu.wasserstein2(&mu).unwrap(), 0.0);

        let a = random_segment(&mut rng, 5);
        let b = random_segment(&mut rng, 5);
        let da = EmpiricalMeasure::dirac(a.clone());
        let db = EmpiricalMeasure::dirac(b.clone());
        let expect = a.sup_distance(&b).unwrap();
        assert!((da.wasserstein2(&db).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn wasserstein_shifted_copies() {
        let mut rng = stream_rng(24, 0);
        let atoms: Vec<Segment> = (0..3).map(|_| random_segment(&mut rng, 4)).collect();
        let c = 5.0;
        let shifted: Vec<Segment> = atoms.iter().map(|s| s.shifted(&[c]).unwrap()).collect();
        let mu = EmpiricalMeasure::new(atoms).unwrap();
        let nu = EmpiricalMeasure::new(shifted).unwrap();
        let w = mu.wasserstein2(&nu).unwrap();
        assert!((w - c).abs() < 1e-10, "w = {w}");
    }

    #[test]
    fn wasserstein_matches_brute_force() {
        use crate::assignment::brute_force_assignment;
        let mut rng = stream_rng(25, 0);
        for n in 1..=6 {
            let mu = random_measure(&mut rng, n, 4);
            let nu = random_measure(&mut rng, n, 4);
            let mut cost = vec![0.0; n * n];
            for i in 0..n {
                for j in 0..n {
                    let d = mu.atom(i).sup_distance(nu.atom(j)).unwrap();
                    cost[i * n + j] = d * d;
                }
            }
            let (_, best) = brute_force_assignment(&cost, n);
            let expect = (best / n as f64).sqrt();
            let got = mu.wasserstein2(&nu).unwrap();
            assert!((got - expect).abs() < 1e-10, "n={n}: {got} vs {expect}");
        }
    }

    #[test]
    fn wasserstein_to_zero_measure_is_second_moment() {
        // Pairing with copies of the zero segment always costs the second
        // moment, whatever the assignment.
        let mut rng = stream_rng(26, 0);
        let mu = random_measure(&mut rng, 5, 4);
        let zeros =
            EmpiricalMeasure::new(vec![Segment::constant(&[0.0], 3).unwrap(); 5]).unwrap();
        let w = mu.wasserstein2(&zeros).unwrap();
        assert!((w * w - mu.second_moment()).abs() < 1e-12);
    }

    #[test]
    fn mismatched_atom_counts_rejected() {
        let mut rng = stream_rng(27, 0);
        let mu = random_measure(&mut rng, 3, 4);
        let nu = random_measure(&mut rng, 4, 4);
        assert!(mu.wasserstein2(&nu).is_err());
    }
}
