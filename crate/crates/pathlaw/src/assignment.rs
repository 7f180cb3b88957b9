//! Exact minimum-cost assignment (Hungarian algorithm, O(n^3) potentials
//! formulation). Used for the optimal coupling between two equal-size
//! empirical measures.

/// Returns `assign` with `assign[row] = col` minimising the total cost over
/// all permutations. `cost` is a square row-major matrix.
pub fn min_cost_assignment(cost: &[f64], n: usize) -> Vec<usize> {
    assert_eq!(cost.len(), n * n, "cost matrix must be n x n");
    if n == 0 {
        return Vec::new();
    }
    // 1-indexed potentials; p[j] is the row matched to column j (0 = free).
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0usize; n];
    for j in 1..=n {
        assign[p[j] - 1] = j - 1;
    }
    assign
}

#[cfg(test)]
pub(crate) fn brute_force_assignment(cost: &[f64], n: usize) -> (Vec<usize>, f64) {
    fn permute(rest: &mut Vec<usize>, chosen: &mut Vec<usize>, cost: &[f64], n: usize, best: &mut (Vec<usize>, f64)) {
        if rest.is_empty() {
            let total: f64 = chosen.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum();
            if total < best.1 {
                *best = (chosen.clone(), total);
            }
            return;
        }
        for idx in 0..rest.len() {
            let j = rest.remove(idx);
            chosen.push(j);
            permute(rest, chosen, cost, n, best);
            chosen.pop();
            rest.insert(idx, j);
        }
    }
    let mut best = (Vec::new(), f64::INFINITY);
    permute(&mut (0..n).collect(), &mut Vec::new(), cost, n, &mut best);
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{next_f64, stream_rng};

    fn total(cost: &[f64], n: usize, assign: &[usize]) -> f64 {
        assign.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum()
    }

    #[test]
    fn matches_brute_force_on_random_matrices() {
        let mut rng = stream_rng(11, 0);
        for n in 1..=6 {
            for _ in 0..40 {
                let cost: Vec<f64> = (0..n * n).map(|_| next_f64(&mut rng) * 10.0).collect();
                let fast = min_cost_assignment(&cost, n);
                let (_, best) = brute_force_assignment(&cost, n);
                let got = total(&cost, n, &fast);
                assert!(
                    (got - best).abs() <= 1e-9 * (1.0 + best.abs()),
                    "n={n}: hungarian {got} vs brute {best}"
                );
            }
        }
    }

    #[test]
    fn assignment_is_a_permutation() {
        let mut rng = stream_rng(12, 0);
        let n = 8;
        let cost: Vec<f64> = (0..n * n).map(|_| next_f64(&mut rng)).collect();
        let mut assign = min_cost_assignment(&cost, n);
        assign.sort_unstable();
        assert_eq!(assign, (0..n).collect::<Vec<_>>());
    }
}
