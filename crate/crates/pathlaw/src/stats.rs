//! Small statistical helpers for the experiment harness: a two-sample
//! Kolmogorov-Smirnov statistic, medians, sample moments and log-log slope
//! fits.

/// Two-sample Kolmogorov-Smirnov statistic `sup |F_a - F_b|`, by a sorted
/// merge walk.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    assert!(!a.is_empty() && !b.is_empty(), "ks_statistic needs nonempty samples");
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let (na, nb) = (xs.len() as f64, ys.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut max_gap = 0.0f64;
    while i < xs.len() && j < ys.len() {
        let x = xs[i];
        let y = ys[j];
        if x <= y {
            i += 1;
        }
        if y <= x {
            j += 1;
        }
        let gap = (i as f64 / na - j as f64 / nb).abs();
        max_gap = max_gap.max(gap);
    }
    // Walk out whichever sample remains.
    while i < xs.len() {
        i += 1;
        max_gap = max_gap.max((i as f64 / na - j as f64 / nb).abs());
    }
    while j < ys.len() {
        j += 1;
        max_gap = max_gap.max((i as f64 / na - j as f64 / nb).abs());
    }
    max_gap
}

/// Large-sample two-sample KS critical value at level `alpha`:
/// `sqrt(ln(2/alpha)/2) * sqrt(1/n1 + 1/n2)`.
pub fn ks_critical_value(alpha: f64, n1: usize, n2: usize) -> f64 {
    ((2.0 / alpha).ln() / 2.0).sqrt() * (1.0 / n1 as f64 + 1.0 / n2 as f64).sqrt()
}

/// Median by sorting; even lengths average the two central order statistics.
pub fn median(xs: &[f64]) -> f64 {
    assert!(!xs.is_empty(), "median of empty slice");
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance (n - 1 denominator).
pub fn sample_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Ordinary least squares slope of `ln y` on `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let mx = mean(&lx);
    let my = mean(&ly);
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in lx.iter().zip(&ly) {
        num += (x - mx) * (y - my);
        den += (x - mx) * (x - mx);
    }
    num / den
}
