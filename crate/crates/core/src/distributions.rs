//! Laws of the cluster size `S`.
//!
//! For a Hawkes process the number of points in a cluster is the total
//! progeny of a Galton–Watson tree with Poisson(`mu`) offspring, which has the
//! Borel distribution
//!
//! ```text
//! P(S = k) = exp(-k mu) (k mu)^(k-1) / k!,   k = 1, 2, ...
//! ```
//!
//! Its moment generating function `phi(theta) = E[exp(theta S)]` has no
//! closed form. It is the smaller root of
//!
//! ```text
//! phi = exp(theta) * exp(mu (phi - 1))
//! ```
//!
//! which exists exactly for `theta <= theta0 = mu - 1 - ln(mu)`, where the two
//! roots merge at `phi = 1 / mu`. Everything downstream (rate functions,
//! tilting) is written against [`ClusterSizeLaw`], which also admits explicit
//! finite probability tables.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::roots::newton_bisect;

/// Default cap on the number of points in one cluster.
pub const DEFAULT_PROGENY_CAP: u64 = 10_000_000;

/// Absolute tolerance (in `ln phi`) of the implicit MGF solver.
const MGF_TOL: f64 = 1e-15;
const MGF_MAX_ITER: usize = 200;

/// Hard cap on the number of series terms.
pub const SERIES_MAX_TERMS: usize = 1_000_000;

/// Borel law of the total progeny of a Poisson(`mu`) Galton–Watson tree.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BorelLaw {
    mu: f64,
}

/// `P(S = k)` under the Borel law with branching mean `mu`.
pub fn borel_pmf(mu: f64, k: u64) -> Result<f64> {
    let law = BorelLaw::new(mu)?;
    if k == 0 {
        return Err(Error::InvalidArgument("cluster sizes start at k = 1".into()));
    }
    Ok(law.pmf(k))
}

/// Result of summing `sum_k exp(theta k) P(S = k)` term by term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesSum {
    pub value: f64,
    pub terms: usize,
    /// False when the term cap was hit before the tail bound was met.
    pub converged: bool,
}

impl BorelLaw {
    pub fn new(mu: f64) -> Result<Self> {
        if mu > 0.0 && mu < 1.0 {
            Ok(Self { mu })
        } else {
            Err(Error::BranchingMean(mu))
        }
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn mean(&self) -> f64 {
        1.0 / (1.0 - self.mu)
    }

    /// Supremum of the effective domain, `mu - 1 - ln(mu)`.
    pub fn theta0(&self) -> f64 {
        self.mu - 1.0 - self.mu.ln()
    }

    pub fn ln_pmf(&self, k: u64) -> f64 {
        if k == 0 {
            return f64::NEG_INFINITY;
        }
        let k = k as f64;
        -k * self.mu + (k - 1.0) * (k * self.mu).ln() - ln_gamma(k + 1.0)
    }

    /// Computed in log space, so it does not overflow for large `k`.
    pub fn pmf(&self, k: u64) -> f64 {
        self.ln_pmf(k).exp()
    }

    /// MGF by solving the functional equation on the branch `(0, 1/mu]`.
    ///
    /// Returns `+inf` above `theta0` and exactly `1/mu` at `theta0`.
    pub fn mgf(&self, theta: f64) -> f64 {
        if theta.is_nan() {
            return f64::NAN;
        }
        if theta == f64::NEG_INFINITY {
            return 0.0;
        }
        let theta0 = self.theta0();
        if theta > theta0 {
            return f64::INFINITY;
        }
        if theta == theta0 {
            return 1.0 / self.mu;
        }
        self.ln_mgf_interior(theta).exp()
    }

    /// Solves `v = mu (exp(theta + v) - 1)` for `v = ln(phi) - theta`, with
    /// `theta < theta0`.
    ///
    /// `H(v) = v - mu (exp(theta + v) - 1)` is increasing and concave on
    /// `(-inf, -ln(mu) - theta]`, equals `-mu exp(theta - mu) < 0` at
    /// `v = -mu` and `theta0 - theta > 0` at the right end. Working with `v`
    /// keeps the residual free of cancellation when `theta` is very negative.
    fn ln_mgf_interior(&self, theta: f64) -> f64 {
        let mu = self.mu;
        let h = |v: f64| (v - mu * (theta + v).exp_m1(), 1.0 - mu * (theta + v).exp());
        let lo = -mu;
        let hi = -mu.ln() - theta;
        let v =
            newton_bisect(h, lo, hi, MGF_TOL, MGF_MAX_ITER).expect("the MGF equation is bracketed for theta < theta0");
        (theta + v).min(-mu.ln())
    }

    /// `E[S exp(theta S)] = phi / (1 - mu phi)`; `+inf` for `theta >= theta0`.
    pub fn mgf_derivative(&self, theta: f64) -> f64 {
        if theta >= self.theta0() {
            return f64::INFINITY;
        }
        let phi = self.mgf(theta);
        phi / (1.0 - self.mu * phi)
    }

    /// `E[S^2 exp(theta S)] = phi / (1 - mu phi)^3`; `+inf` for `theta >= theta0`.
    pub fn mgf_second_derivative(&self, theta: f64) -> f64 {
        if theta >= self.theta0() {
            return f64::INFINITY;
        }
        let phi = self.mgf(theta);
        let d = 1.0 - self.mu * phi;
        phi / (d * d * d)
    }

    /// Term-by-term evaluation of `sum_k exp(theta k) P(S = k)`.
    ///
    /// Consecutive terms have ratio `exp(theta - mu) mu (1 + 1/k)^(k-1)`,
    /// which increases to `r = exp(theta - theta0)`, so after term `k` the
    /// remaining mass is at most `term_k r / (1 - r)`. Summation stops once
    /// that bound drops below `rel_tol` times the running sum.
    pub fn series(&self, theta: f64, rel_tol: f64) -> SeriesSum {
        let mu = self.mu;
        let r_limit = (theta - self.theta0()).exp();
        let base = (theta - mu).exp() * mu;
        let mut term = (theta - mu).exp(); // k = 1
        let mut sum = 0.0;
        for k in 1..=SERIES_MAX_TERMS {
            sum += term;
            let tail_bound = if r_limit < 1.0 {
                term * r_limit / (1.0 - r_limit)
            } else {
                f64::INFINITY
            };
            if tail_bound < rel_tol * sum {
                return SeriesSum {
                    value: sum,
                    terms: k,
                    converged: true,
                };
            }
            let kf = k as f64;
            term *= base * ((kf - 1.0) * (1.0 / kf).ln_1p()).exp();
        }
        SeriesSum {
            value: sum,
            terms: SERIES_MAX_TERMS,
            converged: false,
        }
    }

    /// Total progeny of a Galton–Watson tree with Poisson(`mu`) offspring.
    ///
    /// Individuals waiting to reproduce are kept in a frontier; the ancestor
    /// counts toward the total.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, cap: u64) -> Result<u64> {
        let offspring = Poisson::new(self.mu).expect("mu is positive");
        let mut total: u64 = 1;
        let mut frontier: u64 = 1;
        while frontier > 0 {
            frontier -= 1;
            let children = offspring.sample(rng) as u64;
            total += children;
            frontier += children;
            if total > cap {
                return Err(Error::ClusterCap { cap });
            }
        }
        Ok(total)
    }
}

/// Finite probability table over the sizes `1..=probs.len()`.
#[derive(Debug, Clone, PartialEq)]
pub struct TablePmf {
    probs: Vec<f64>,
    cdf: Vec<f64>,
}

impl TablePmf {
    /// `probs[i]` is `P(S = i + 1)`. The entries must be nonnegative and sum
    /// to one within `1e-9`; they are renormalized exactly.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidPmf("empty table".into()));
        }
        if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::InvalidPmf("probabilities must be finite and nonnegative".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidPmf(format!("probabilities sum to {total}, not 1")));
        }
        let probs: Vec<f64> = probs.iter().map(|p| p / total).collect();
        let mut acc = 0.0;
        let cdf = probs
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        Ok(Self { probs, cdf })
    }

    /// The law of a cluster with exactly `k` points.
    pub fn deterministic(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidPmf("cluster sizes start at k = 1".into()));
        }
        let mut probs = vec![0.0; k];
        probs[k - 1] = 1.0;
        Self::new(probs)
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn max_size(&self) -> u64 {
        self.probs.len() as u64
    }

    pub fn pmf(&self, k: u64) -> f64 {
        if k == 0 {
            return 0.0;
        }
        self.probs.get(k as usize - 1).copied().unwrap_or(0.0)
    }

    pub fn mean(&self) -> f64 {
        self.moment_sum(0.0, 1)
    }

    /// `sum_k k^power p_k exp(theta k)`, evaluated with a shifted exponent so
    /// that only a genuine overflow yields `+inf`.
    fn moment_sum(&self, theta: f64, power: i32) -> f64 {
        let shift = self
            .probs
            .iter()
            .enumerate()
            .filter(|(_, p)| **p > 0.0)
            .map(|(i, _)| theta * (i + 1) as f64)
            .fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = self
            .probs
            .iter()
            .enumerate()
            .filter(|(_, p)| **p > 0.0)
            .map(|(i, p)| {
                let k = (i + 1) as f64;
                p * k.powi(power) * (theta * k - shift).exp()
            })
            .sum();
        sum * shift.exp()
    }

    pub fn mgf(&self, theta: f64) -> f64 {
        self.moment_sum(theta, 0)
    }

    pub fn mgf_derivative(&self, theta: f64) -> f64 {
        self.moment_sum(theta, 1)
    }

    pub fn mgf_second_derivative(&self, theta: f64) -> f64 {
        self.moment_sum(theta, 2)
    }

    /// Inverse-CDF draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        let u: f64 = rng.random();
        let idx = self.cdf.partition_point(|&c| c <= u);
        // Guards against a final cdf entry a hair below one.
        let idx = idx.min(self.probs.len() - 1);
        idx as u64 + 1
    }
}

/// Supremum of the effective domain `{theta : E[exp(theta S)] < inf}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DomainSup {
    pub theta0: f64,
    /// Whether `theta0` itself belongs to the domain; `None` when
    /// `theta0 = +inf`.
    pub closed: Option<bool>,
}

/// Distribution of the number of points in one cluster.
#[derive(Debug, Clone, PartialEq)]
pub enum ClusterSizeLaw {
    Borel(BorelLaw),
    Table(TablePmf),
}

impl ClusterSizeLaw {
    pub fn borel(mu: f64) -> Result<Self> {
        BorelLaw::new(mu).map(Self::Borel)
    }

    pub fn table(probs: Vec<f64>) -> Result<Self> {
        TablePmf::new(probs).map(Self::Table)
    }

    pub fn pmf(&self, k: u64) -> f64 {
        match self {
            Self::Borel(b) => {
                if k == 0 {
                    0.0
                } else {
                    b.pmf(k)
                }
            }
            Self::Table(t) => t.pmf(k),
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            Self::Borel(b) => b.mean(),
            Self::Table(t) => t.mean(),
        }
    }

    pub fn mgf(&self, theta: f64) -> f64 {
        match self {
            Self::Borel(b) => b.mgf(theta),
            Self::Table(t) => t.mgf(theta),
        }
    }

    pub fn mgf_derivative(&self, theta: f64) -> f64 {
        match self {
            Self::Borel(b) => b.mgf_derivative(theta),
            Self::Table(t) => t.mgf_derivative(theta),
        }
    }

    pub fn mgf_second_derivative(&self, theta: f64) -> f64 {
        match self {
            Self::Borel(b) => b.mgf_second_derivative(theta),
            Self::Table(t) => t.mgf_second_derivative(theta),
        }
    }

    pub fn domain_sup(&self) -> DomainSup {
        match self {
            Self::Borel(b) => DomainSup {
                theta0: b.theta0(),
                closed: Some(true),
            },
            Self::Table(_) => DomainSup {
                theta0: f64::INFINITY,
                closed: None,
            },
        }
    }

    /// The exponentially tilted law `exp(theta k) p_k / phi(theta)`.
    ///
    /// Tilting Borel(`mu`) gives Borel(`mu phi(theta)`), so the tilted law
    /// is again a Galton–Watson total progeny. Requires `theta` in the
    /// interior of the domain.
    pub fn tilted(&self, theta: f64) -> Result<Self> {
        let sup = self.domain_sup();
        if !(theta < sup.theta0) || !theta.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "tilt parameter {theta} outside the interior of the domain (sup {})",
                sup.theta0
            )));
        }
        match self {
            Self::Borel(b) => Self::borel(b.mu * b.mgf(theta)),
            Self::Table(t) => {
                let phi = t.mgf(theta);
                let probs = t
                    .probs
                    .iter()
                    .enumerate()
                    .map(|(i, p)| p * (theta * (i + 1) as f64).exp() / phi)
                    .collect::<Vec<_>>();
                let total: f64 = probs.iter().sum();
                Self::table(probs.into_iter().map(|p| p / total).collect())
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, cap: u64) -> Result<u64> {
        match self {
            Self::Borel(b) => b.sample(rng, cap),
            Self::Table(t) => {
                let k = t.sample(rng);
                if k > cap {
                    Err(Error::ClusterCap { cap })
                } else {
                    Ok(k)
                }
            }
        }
    }
}

/// Draws one cluster size; see [`ClusterSizeLaw::sample`].
pub fn sample_cluster_size<R: Rng + ?Sized>(law: &ClusterSizeLaw, rng: &mut R) -> Result<u64> {
    law.sample(rng, DEFAULT_PROGENY_CAP)
}

/// `E[exp(theta S)]`, `+inf` outside the effective domain.
pub fn mgf(law: &ClusterSizeLaw, theta: f64) -> f64 {
    law.mgf(theta)
}

/// `E[S exp(theta S)]`, `+inf` where it diverges.
pub fn mgf_derivative(law: &ClusterSizeLaw, theta: f64) -> f64 {
    law.mgf_derivative(theta)
}

pub fn domain_sup(law: &ClusterSizeLaw) -> DomainSup {
    law.domain_sup()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedSequence;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn pmf_reference_values() {
        assert!(close(borel_pmf(0.5, 1).unwrap(), (-0.5f64).exp(), 1e-15));
        assert!(close(borel_pmf(0.5, 2).unwrap(), (-1f64).exp() / 2.0, 1e-15));
        assert!(close(borel_pmf(0.5, 1).unwrap(), 0.606531, 1e-6));
        assert!(close(borel_pmf(0.5, 2).unwrap(), 0.183940, 1e-6));
    }

    #[test]
    fn pmf_rejects_bad_arguments() {
        assert_eq!(borel_pmf(1.0, 3), Err(Error::BranchingMean(1.0)));
        assert_eq!(borel_pmf(0.0, 3), Err(Error::BranchingMean(0.0)));
        assert!(borel_pmf(-0.2, 3).is_err());
        assert!(borel_pmf(f64::NAN, 3).is_err());
        assert!(matches!(borel_pmf(0.5, 0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn pmf_large_k_is_finite() {
        let p = borel_pmf(0.9, 5000).unwrap();
        assert!(p > 0.0 && p < 1e-10);
    }

    #[test]
    fn pmf_normalizes() {
        for mu in [0.2, 0.5, 0.8] {
            let s = BorelLaw::new(mu).unwrap().series(0.0, 1e-15);
            assert!(s.converged);
            assert!(close(s.value, 1.0, 1e-10), "mu = {mu}: {}", s.value);
        }
    }

    #[test]
    fn domain_sup_values() {
        let law = ClusterSizeLaw::borel(0.5).unwrap();
        let d = law.domain_sup();
        assert!(close(d.theta0, 0.193_147_2, 1e-7));
        assert_eq!(d.closed, Some(true));
        let near = BorelLaw::new(0.999).unwrap().theta0();
        assert!(near > 0.0 && near < 1e-6);
        let table = ClusterSizeLaw::table(vec![0.2; 5]).unwrap();
        assert_eq!(
            table.domain_sup(),
            DomainSup {
                theta0: f64::INFINITY,
                closed: None
            }
        );
    }

    #[test]
    fn mgf_at_zero_and_at_the_boundary() {
        let law = BorelLaw::new(0.5).unwrap();
        assert!(close(law.mgf(0.0), 1.0, 1e-14));
        assert_eq!(law.mgf(law.theta0()), 2.0);
        assert_eq!(law.mgf(law.theta0() + 1e-9), f64::INFINITY);
        assert_eq!(law.mgf(f64::NEG_INFINITY), 0.0);
    }

    #[test]
    fn mgf_matches_series() {
        let law = BorelLaw::new(0.5).unwrap();
        let s = law.series(0.1, 1e-16);
        assert!(s.converged);
        assert!(close(law.mgf(0.1), s.value, 1e-10));
    }

    #[test]
    fn mgf_branch_stays_below_inverse_mu() {
        let law = BorelLaw::new(0.3).unwrap();
        for i in 0..200 {
            let theta = law.theta0() - 10.0 * (i as f64 / 200.0).powi(3);
            let phi = law.mgf(theta);
            assert!(phi > 0.0 && phi <= 1.0 / 0.3, "theta = {theta}, phi = {phi}");
        }
        let very_negative = law.mgf(-700.0);
        assert!(very_negative > 0.0 && very_negative < 1e-300);
    }

    #[test]
    fn derivative_values() {
        let law = BorelLaw::new(0.5).unwrap();
        assert!(close(law.mgf_derivative(0.0), 2.0, 1e-13));
        assert_eq!(law.mgf_derivative(law.theta0()), f64::INFINITY);
        let (theta, h) = (0.05, 1e-6);
        let fd = (law.mgf(theta + h) - law.mgf(theta - h)) / (2.0 * h);
        let exact = law.mgf_derivative(theta);
        assert!(((fd - exact) / exact).abs() < 1e-6);
    }

    #[test]
    fn table_law_moments() {
        let t = TablePmf::new(vec![0.5, 0.25, 0.25]).unwrap();
        assert!(close(t.mean(), 1.75, 1e-15));
        assert!(close(t.mgf(0.0), 1.0, 1e-15));
        let theta = 0.3f64;
        let direct = 0.5 * theta.exp() + 0.25 * (2.0 * theta).exp() + 0.25 * (3.0 * theta).exp();
        assert!(close(t.mgf(theta), direct, 1e-14));
        assert!(t.mgf(800.0).is_infinite());
        assert!(TablePmf::new(vec![0.5, 0.4]).is_err());
        assert!(TablePmf::new(vec![]).is_err());
        assert!(TablePmf::new(vec![1.5, -0.5]).is_err());
    }

    #[test]
    fn tilted_borel_is_borel() {
        let law = ClusterSizeLaw::borel(0.5).unwrap();
        let theta = 0.08;
        let tilted = law.tilted(theta).unwrap();
        let phi = law.mgf(theta);
        for k in 1..20 {
            let direct = (theta * k as f64).exp() * law.pmf(k) / phi;
            assert!(close(tilted.pmf(k), direct, 1e-14), "k = {k}");
        }
        assert!(law.tilted(1.0).is_err());
    }

    #[test]
    fn sampler_mean_at_half() {
        let law = BorelLaw::new(0.5).unwrap();
        let mut rng = SeedSequence::new(11).stream(0);
        let n = 1_000_000;
        let xs: Vec<f64> = (0..n)
            .map(|_| law.sample(&mut rng, DEFAULT_PROGENY_CAP).unwrap() as f64)
            .collect();
        let (mean, se) = crate::stats::mean_and_se(&xs);
        assert!((mean - 2.0).abs() < 3.0 * se, "mean {mean} se {se}");
    }

    #[test]
    fn sampler_fits_pmf() {
        let law = BorelLaw::new(0.3).unwrap();
        let mut rng = SeedSequence::new(12).stream(0);
        let n = 200_000u64;
        let mut counts = vec![0u64; 10];
        for _ in 0..n {
            let k = law.sample(&mut rng, DEFAULT_PROGENY_CAP).unwrap();
            if k <= 10 {
                counts[k as usize - 1] += 1;
            }
        }
        let probs: Vec<f64> = (1..=10).map(|k| law.pmf(k)).collect();
        let test = crate::stats::chi_square_gof(&counts, &probs, n, 5.0);
        assert!(test.p_value > 0.01, "{test:?}");
    }

    #[test]
    fn sampler_near_zero_mu() {
        let law = BorelLaw::new(1e-6).unwrap();
        let mut rng = SeedSequence::new(13).stream(0);
        let n = 1_000_000;
        let ones = (0..n)
            .filter(|_| law.sample(&mut rng, DEFAULT_PROGENY_CAP).unwrap() == 1)
            .count();
        assert!(ones as f64 / n as f64 >= 1.0 - 1e-5);
    }

    #[test]
    fn sampler_cap_is_an_error() {
        let law = BorelLaw::new(0.99).unwrap();
        let mut rng = SeedSequence::new(14).stream(0);
        let capped = (0..1000).any(|_| law.sample(&mut rng, 5) == Err(Error::ClusterCap { cap: 5 }));
        assert!(capped);
    }

    #[test]
    fn table_sampler_is_inverse_cdf() {
        let law = ClusterSizeLaw::table(vec![0.0, 1.0]).unwrap();
        let mut rng = SeedSequence::new(15).stream(0);
        assert!((0..100).all(|_| law.sample(&mut rng, DEFAULT_PROGENY_CAP).unwrap() == 2));
        assert_eq!(law.sample(&mut rng, 1), Err(Error::ClusterCap { cap: 1 }));
    }
}
