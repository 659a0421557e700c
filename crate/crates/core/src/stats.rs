//! Interval estimates and goodness-of-fit tests used by the experiment harness.

use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Two-sided 95% standard normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Wilson score interval for a binomial proportion.
pub fn wilson(hits: u64, n: u64, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n = n as f64;
    let p = hits.min(n as u64) as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    let lo = if hits == 0 { 0.0 } else { (center - half).max(0.0) };
    let hi = if hits as f64 >= n {
        1.0
    } else {
        (center + half).min(1.0)
    };
    (lo, hi)
}

/// Sample mean and its standard error.
pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChiSquareTest {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

fn chi_square_p(statistic: f64, dof: usize) -> f64 {
    if dof == 0 {
        return 1.0;
    }
    let dist = ChiSquared::new(dof as f64).expect("positive degrees of freedom");
    1.0 - dist.cdf(statistic)
}

/// Pearson goodness-of-fit test of observed counts against cell probabilities.
///
/// `observed[i]` counts the outcomes in cell `i` and `probs[i]` is its model
/// probability. Outcomes outside the listed cells (`total - sum(observed)`)
/// form an extra tail cell carrying the probability the listed cells miss.
/// Adjacent cells are pooled left to right until each expects at least
/// `min_expected` outcomes.
pub fn chi_square_gof(observed: &[u64], probs: &[f64], total: u64, min_expected: f64) -> ChiSquareTest {
    assert_eq!(observed.len(), probs.len());
    let seen: u64 = observed.iter().sum();
    assert!(seen <= total, "observed more outcomes than the total");
    let mut cells: Vec<(f64, f64)> = observed.iter().zip(probs).map(|(&o, &p)| (o as f64, p)).collect();
    let tail_p = (1.0 - probs.iter().sum::<f64>()).max(0.0);
    cells.push(((total - seen) as f64, tail_p));
    gof_pooled(&cells, min_expected, total as f64)
}

fn gof_pooled(cells: &[(f64, f64)], min_expected: f64, n: f64) -> ChiSquareTest {
    let mut pooled: Vec<(f64, f64)> = Vec::new();
    let mut acc = (0.0, 0.0);
    for &(o, p) in cells {
        acc.0 += o;
        acc.1 += p * n;
        if acc.1 >= min_expected {
            pooled.push(acc);
            acc = (0.0, 0.0);
        }
    }
    if acc.0 > 0.0 || acc.1 > 0.0 {
        match pooled.last_mut() {
            Some(last) => {
                last.0 += acc.0;
                last.1 += acc.1;
            }
            None => pooled.push(acc),
        }
    }
    let statistic = pooled
        .iter()
        .map(|&(o, e)| {
            if e > 0.0 {
                (o - e) * (o - e) / e
            } else if o > 0.0 {
                f64::INFINITY
            } else {
                0.0
            }
        })
        .sum::<f64>();
    let dof = pooled.len().saturating_sub(1);
    ChiSquareTest {
        statistic,
        dof,
        p_value: chi_square_p(statistic, dof),
    }
}

/// Two-sample chi-square homogeneity test on count histograms.
pub fn chi_square_two_sample(a: &[u64], b: &[u64], min_expected: f64) -> ChiSquareTest {
    let len = a.len().max(b.len());
    let get = |v: &[u64], i: usize| v.get(i).copied().unwrap_or(0) as f64;
    let na: f64 = a.iter().sum::<u64>() as f64;
    let nb: f64 = b.iter().sum::<u64>() as f64;
    let n = na + nb;
    let mut pooled: Vec<(f64, f64)> = Vec::new();
    let mut acc = (0.0, 0.0);
    for i in 0..len {
        acc.0 += get(a, i);
        acc.1 += get(b, i);
        let total = acc.0 + acc.1;
        if total * na.min(nb) / n >= min_expected {
            pooled.push(acc);
            acc = (0.0, 0.0);
        }
    }
    if acc.0 + acc.1 > 0.0 {
        match pooled.last_mut() {
            Some(last) => {
                last.0 += acc.0;
                last.1 += acc.1;
            }
            None => pooled.push(acc),
        }
    }
    let statistic = pooled
        .iter()
        .map(|&(x, y)| {
            let t = x + y;
            let ea = t * na / n;
            let eb = t * nb / n;
            (x - ea) * (x - ea) / ea + (y - eb) * (y - eb) / eb
        })
        .sum::<f64>();
    let dof = pooled.len().saturating_sub(1);
    ChiSquareTest {
        statistic,
        dof,
        p_value: chi_square_p(statistic, dof),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wilson_reference_values() {
        // Reference values from the closed form at z = 1.96.
        let (lo, _) = wilson(10, 10, 1.96);
        assert!((lo - 0.722_459_831_233_383_4).abs() < 1e-9);
        let (lo, hi) = wilson(80, 100, 1.96);
        assert!((lo - 0.711_169_038_073_497_6).abs() < 1e-9);
        assert!(hi > 0.8 && hi < 0.9);
    }

    #[test]
    fn wilson_zero_hits_has_positive_upper_end() {
        let (lo, hi) = wilson(0, 1000, Z95);
        assert_eq!(lo, 0.0);
        assert!(hi > 0.0 && hi < 0.01);
    }

    #[test]
    fn perfect_fit_has_p_value_one() {
        let t = chi_square_gof(&[25, 25, 25, 25], &[0.25; 4], 100, 5.0);
        assert_eq!(t.statistic, 0.0);
        assert!((t.p_value - 1.0).abs() < 1e-12);
        assert_eq!(t.dof, 3);
    }

    #[test]
    fn gross_misfit_is_rejected() {
        let t = chi_square_gof(&[90, 10], &[0.5, 0.5], 100, 5.0);
        assert!(t.p_value < 1e-10);
    }

    #[test]
    fn two_sample_identical_histograms() {
        let t = chi_square_two_sample(&[10, 20, 30], &[10, 20, 30], 5.0);
        assert_eq!(t.statistic, 0.0);
    }
}
