//! Small statistics helpers: moments, standard errors, rank correlation.

use statrs::distribution::{ContinuousCDF, StudentsT};

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population standard deviation (divides by `n`).
pub fn population_std(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// Sample standard deviation (divides by `n - 1`); zero for fewer than two values.
pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Standard error of a Bernoulli mean estimated from `n` draws.
pub fn bernoulli_standard_error(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

/// Ranks starting at 1, with ties assigned their average rank.
pub fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let mx = mean(xs);
    let my = mean(ys);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spearman {
    pub rho: f64,
    /// Two-sided p-value for the null hypothesis of no association.
    pub p_value: f64,
}

/// Largest sample size for which the p-value is computed by exhaustive permutation.
const EXACT_PERMUTATION_LIMIT: usize = 9;

/// Spearman rank correlation. For `n <= 9` the p-value is exact (all `n!`
/// permutations); above that the Student-t approximation is used.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Spearman {
    assert_eq!(xs.len(), ys.len(), "spearman: length mismatch");
    let n = xs.len();
    if n < 3 {
        return Spearman { rho: 0.0, p_value: 1.0 };
    }
    let rx = ranks(xs);
    let ry = ranks(ys);
    let rho = pearson(&rx, &ry);
    let p_value = if n <= EXACT_PERMUTATION_LIMIT {
        exact_p_value(&rx, &ry, rho)
    } else {
        t_p_value(rho, n)
    };
    Spearman { rho, p_value }
}

fn t_p_value(rho: f64, n: usize) -> f64 {
    if rho.abs() >= 1.0 {
        return 0.0;
    }
    let df = (n - 2) as f64;
    let t = rho * (df / (1.0 - rho * rho)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("valid t distribution");
    2.0 * (1.0 - dist.cdf(t.abs()))
}

fn exact_p_value(rx: &[f64], ry: &[f64], rho: f64) -> f64 {
    let n = ry.len();
    let mut perm: Vec<f64> = ry.to_vec();
    let mut c = vec![0usize; n];
    let threshold = rho.abs() - 1e-12;
    let mut hits = 0u64;
    let mut total = 0u64;
    let mut visit = |p: &[f64]| {
        total += 1;
        if pearson(rx, p).abs() >= threshold {
            hits += 1;
        }
    };
    // Heap's algorithm.
    visit(&perm);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            visit(&perm);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    hits as f64 / total as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn std_flavours() {
        let xs = [1.0, 1.0, 0.0, 0.0];
        assert_abs_diff_eq!(population_std(&xs), 0.5);
        assert_abs_diff_eq!(sample_std(&xs), (1.0f64 / 3.0).sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn ranks_with_ties() {
        assert_eq!(ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn perfectly_decreasing_sequence() {
        let xs: Vec<f64> = (1..=9).map(f64::from).collect();
        let ys: Vec<f64> = xs.iter().map(|x| -x).collect();
        let s = spearman(&xs, &ys);
        assert_abs_diff_eq!(s.rho, -1.0, epsilon = 1e-12);
        // Only the identity and the reversal reach |rho| = 1.
        assert_abs_diff_eq!(s.p_value, 2.0 / 362_880.0, epsilon = 1e-15);
    }

    #[test]
    fn exact_and_t_agree_roughly() {
        let xs: Vec<f64> = (1..=9).map(f64::from).collect();
        let ys = [9.0, 7.0, 8.0, 6.0, 4.0, 5.0, 3.0, 1.0, 2.0];
        let s = spearman(&xs, &ys);
        let approx = t_p_value(s.rho, 9);
        assert!(s.rho < -0.9);
        assert!(s.p_value < 0.01 && approx < 0.01);
    }
}
