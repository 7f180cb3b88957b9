//! Derivative-free simplex minimisation over a closed box.
//!
//! Standard Nelder-Mead moves (reflection 1, expansion 2, contraction 0.5,
//! shrink 0.5); every proposed point is projected onto the box before
//! evaluation, so the simplex never leaves the feasible region.

use nalgebra::DVector;

use crate::model::ThetaBox;

#[derive(Debug, Clone)]
pub struct NelderMeadOptions {
    pub max_evals: usize,
    /// Stop when the largest vertex distance to the best point falls below this.
    pub diameter_tol: f64,
    /// Stop when the value spread across the simplex falls below this.
    pub spread_tol: f64,
    /// Initial simplex step, as a fraction of each box width.
    pub init_step_frac: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        NelderMeadOptions {
            max_evals: 10_000,
            diameter_tol: 1e-8,
            spread_tol: 1e-10,
            init_step_frac: 0.05,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NelderMeadOutcome {
    pub best: DVector<f64>,
    pub value: f64,
    pub evaluations: usize,
    pub converged: bool,
}

struct Vertex {
    x: DVector<f64>,
    f: f64,
}

/// NaN-tolerant ordering: non-finite values sort worst.
fn value_cmp(a: f64, b: f64) -> std::cmp::Ordering {
    a.total_cmp(&b)
}

/// Minimises with restarts: each round runs the simplex to its stopping rule,
/// then a fresh small simplex is seeded at the best point. Rounds stop once a
/// restart no longer moves the best point (the value-spread rule alone can
/// park the simplex slightly off the optimum along a weakly curved
/// direction; the restart polishes that away).
pub fn minimize(
    f: impl Fn(&DVector<f64>) -> f64,
    start: &DVector<f64>,
    bounds: &ThetaBox,
    opts: &NelderMeadOptions,
) -> NelderMeadOutcome {
    let mut total_evals = 0usize;
    let mut current = start.clone();
    let mut best: Option<NelderMeadOutcome> = None;
    let mut step_frac = opts.init_step_frac;
    let mut spread_tol = opts.spread_tol;
    let mut stalled = false;
    for _ in 0..20 {
        let round_opts = NelderMeadOptions {
            max_evals: opts.max_evals.saturating_sub(total_evals),
            init_step_frac: step_frac,
            spread_tol,
            ..opts.clone()
        };
        let round = minimize_round(&f, &current, bounds, &round_opts);
        total_evals += round.evaluations;
        let moved = (&round.best - &current).amax();
        current = round.best.clone();
        if best.as_ref().map_or(true, |b| round.value < b.value) {
            best = Some(round);
        }
        if moved < opts.diameter_tol {
            stalled = true;
            break;
        }
        if total_evals >= opts.max_evals {
            break;
        }
        // Polish rounds: a small fresh simplex with a tighter value-spread
        // rule, annealed down to the evaluation noise floor of the objective.
        step_frac = 1e-3;
        let noise_floor = 32.0 * f64::EPSILON * best.as_ref().map_or(1.0, |b| b.value.abs().max(1.0));
        spread_tol = (spread_tol * 1e-2).max(noise_floor);
    }
    let mut out = best.expect("at least one round runs");
    out.evaluations = total_evals;
    out.converged = stalled;
    out
}

fn minimize_round(
    f: &impl Fn(&DVector<f64>) -> f64,
    start: &DVector<f64>,
    bounds: &ThetaBox,
    opts: &NelderMeadOptions,
) -> NelderMeadOutcome {
    let p = start.len();
    let project = |mut x: DVector<f64>| {
        bounds.clamp(&mut x);
        x
    };
    let evals = std::cell::Cell::new(0usize);
    let eval = |x: DVector<f64>| {
        evals.set(evals.get() + 1);
        let fx = f(&x);
        Vertex { f: if fx.is_nan() { f64::INFINITY } else { fx }, x }
    };

    let mut simplex: Vec<Vertex> = Vec::with_capacity(p + 1);
    simplex.push(eval(project(start.clone())));
    for i in 0..p {
        let mut x = start.clone();
        let step = opts.init_step_frac * bounds.width(i);
        // Step inward when the outward step would leave the box.
        x[i] = if x[i] + step <= bounds.upper[i] { x[i] + step } else { x[i] - step };
        simplex.push(eval(project(x)));
    }

    let mut converged = false;
    loop {
        simplex.sort_by(|a, b| value_cmp(a.f, b.f));
        let best = &simplex[0];
        let worst = &simplex[p];

        let diameter = simplex[1..]
            .iter()
            .map(|v| (&v.x - &best.x).amax())
            .fold(0.0f64, f64::max);
        let spread = worst.f - best.f;
        if diameter < opts.diameter_tol || spread < opts.spread_tol {
            converged = true;
            break;
        }
        if evals.get() >= opts.max_evals {
            break;
        }

        let mut centroid = DVector::zeros(p);
        for v in &simplex[..p] {
            centroid += &v.x;
        }
        centroid /= p as f64;

        let reflected = eval(project(&centroid * 2.0 - &simplex[p].x));
        if reflected.f < simplex[0].f {
            let expanded = eval(project(&centroid * 3.0 - &simplex[p].x * 2.0));
            simplex[p] = if expanded.f < reflected.f { expanded } else { reflected };
        } else if reflected.f < simplex[p - 1].f {
            simplex[p] = reflected;
        } else {
            let contracted = if reflected.f < simplex[p].f {
                eval(project(&centroid * 0.5 + &reflected.x * 0.5))
            } else {
                eval(project(&centroid * 0.5 + &simplex[p].x * 0.5))
            };
            if contracted.f < simplex[p].f.min(reflected.f) {
                simplex[p] = contracted;
            } else {
                // Shrink toward the best vertex.
                let best_x = simplex[0].x.clone();
                for v in simplex[1..].iter_mut() {
                    *v = eval(project(&best_x * 0.5 + &v.x * 0.5));
                }
            }
        }
    }

    simplex.sort_by(|a, b| value_cmp(a.f, b.f));
    let best = simplex.swap_remove(0);
    NelderMeadOutcome { best: best.x, value: best.f, evaluations: evals.get(), converged }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_shifted_quadratic() {
        let bx = ThetaBox::new(vec![-2.0, -2.0], vec![3.0, 3.0]).unwrap();
        let f = |x: &DVector<f64>| (x[0] - 1.2).powi(2) + 3.0 * (x[1] + 0.7).powi(2);
        let out = minimize(f, &DVector::from_column_slice(&[0.0, 0.0]), &bx, &NelderMeadOptions::default());
        assert!(out.converged);
        assert!((out.best[0] - 1.2).abs() < 1e-6, "{:?}", out.best);
        assert!((out.best[1] + 0.7).abs() < 1e-6, "{:?}", out.best);
    }

    #[test]
    fn respects_box_constraints() {
        let bx = ThetaBox::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        // Unconstrained minimum at (2, 2); constrained at the corner (1, 1).
        let f = |x: &DVector<f64>| (x[0] - 2.0).powi(2) + (x[1] - 2.0).powi(2);
        let out = minimize(f, &DVector::from_column_slice(&[0.5, 0.5]), &bx, &NelderMeadOptions::default());
        assert!((out.best[0] - 1.0).abs() < 1e-6);
        assert!((out.best[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn rosenbrock_in_box() {
        let bx = ThetaBox::new(vec![-2.0, -2.0], vec![2.0, 2.0]).unwrap();
        let f = |x: &DVector<f64>| {
            100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2)
        };
        let out = minimize(f, &DVector::from_column_slice(&[-1.0, 1.0]), &bx, &NelderMeadOptions::default());
        assert!((out.best[0] - 1.0).abs() < 1e-4, "{:?}", out.best);
        assert!((out.best[1] - 1.0).abs() < 1e-4, "{:?}", out.best);
    }

    #[test]
    fn starting_at_minimum_stays_there() {
        let bx = ThetaBox::new(vec![-1.0], vec![1.0]).unwrap();
        let f = |x: &DVector<f64>| x[0] * x[0];
        let out = minimize(f, &DVector::from_column_slice(&[0.0]), &bx, &NelderMeadOptions::default());
        assert!(out.converged);
        assert!(out.best[0].abs() < 1e-7);
    }
}
