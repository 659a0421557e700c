//! Monte Carlo checks of the large deviations limits.
//!
//! Every experiment draws replication `i` at scale `j` from its own stream
//! of a [`SeedSequence`], and reduces per-replication results in index
//! order. Results therefore do not depend on the number of threads.
//!
//! Slopes are `-(1/v) log p_hat`, where the speed `v` is `t` for temporal
//! experiments and `omega_d(r)` for spatial ones. Their intervals come from
//! the delta method on `log p_hat`. A scale without hits has no slope.

use std::io::{self, Write};

use rand::Rng;
use rayon::prelude::*;

use crate::distributions::ClusterSizeLaw;
use crate::error::{positive, Error, Result};
use crate::output::{fmt_opt, fmt_real, write_table};
use crate::ratefn::ScalarRate;
use crate::rng::{tag, SeedSequence};
use crate::simulate::{compound_poisson, count_truncated, default_margin, TemporalSpec};
use crate::spatial::{count_ball, default_spatial_margin, empty_space, is_void, omega_d, EmptySpace, SpatialSpec};
use crate::stats::{mean_and_se, wilson, Z95};

const SCALAR: u64 = tag("verify.scalar");
const PATH: u64 = tag("verify.path");
const VOID: u64 = tag("verify.void");
const TILTED: u64 = tag("verify.tilted");
const PLAIN: u64 = tag("verify.plain");
const MARGIN: u64 = tag("verify.margin");

/// Header of experiment CSV files.
pub const ESTIMATE_HEADER: [&str; 10] = [
    "scale",
    "n_reps",
    "n_hits",
    "p_hat",
    "ci_lo",
    "ci_hi",
    "slope",
    "slope_ci_lo",
    "slope_ci_hi",
    "target",
];

/// Side of a one-sided threshold event on the scaled count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tail {
    /// `{N / v >= a}`
    Upper,
    /// `{N / v <= a}`
    Lower,
}

/// How the immigrant margin is chosen at each scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Margin {
    /// The module default for that scale, from pilot clusters.
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelSpec {
    Temporal(TemporalSpec),
    Spatial(SpatialSpec),
}

impl ModelSpec {
    pub fn nu(&self) -> f64 {
        match self {
            ModelSpec::Temporal(s) => s.nu(),
            ModelSpec::Spatial(s) => s.nu(),
        }
    }

    pub fn size_law(&self) -> &ClusterSizeLaw {
        match self {
            ModelSpec::Temporal(s) => s.size_law(),
            ModelSpec::Spatial(s) => s.size_law(),
        }
    }

    /// The rate function shared by the temporal and spatial limits.
    pub fn rate(&self) -> ScalarRate {
        ScalarRate::new(self.nu(), self.size_law().clone()).expect("specs hold a positive nu")
    }

    /// Speed of the limit at `scale`: `t`, or `omega_d(r)`.
    pub fn speed(&self, scale: f64) -> f64 {
        match self {
            ModelSpec::Temporal(_) => scale,
            ModelSpec::Spatial(s) => omega_d(s.dim(), scale),
        }
    }
}

/// One row of an experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub scale: f64,
    pub speed: f64,
    pub n_reps: u64,
    pub n_hits: u64,
    pub p_hat: f64,
    /// 95% interval for the probability.
    pub ci: (f64, f64),
    pub slope: Option<f64>,
    pub slope_ci: Option<(f64, f64)>,
    pub target: f64,
}

impl Estimate {
    /// Plain Monte Carlo proportion with a Wilson interval.
    pub fn from_hits(scale: f64, speed: f64, n_reps: u64, n_hits: u64, target: f64) -> Self {
        let p_hat = n_hits as f64 / n_reps as f64;
        let se_log = ((1.0 - p_hat) / (n_reps as f64 * p_hat)).sqrt();
        let mut e = Self::bare(scale, speed, n_reps, n_hits, p_hat, wilson(n_hits, n_reps, Z95), target);
        e.set_slope(se_log);
        e
    }

    /// Weighted estimator with a normal interval from its standard error.
    pub fn from_weighted(scale: f64, speed: f64, n_reps: u64, n_hits: u64, mean: f64, se: f64, target: f64) -> Self {
        let ci = ((mean - Z95 * se).max(0.0), mean + Z95 * se);
        let mut e = Self::bare(scale, speed, n_reps, n_hits, mean, ci, target);
        e.set_slope(se / mean);
        e
    }

    fn bare(scale: f64, speed: f64, n_reps: u64, n_hits: u64, p_hat: f64, ci: (f64, f64), target: f64) -> Self {
        Self {
            scale,
            speed,
            n_reps,
            n_hits,
            p_hat,
            ci,
            slope: None,
            slope_ci: None,
            target,
        }
    }

    fn set_slope(&mut self, se_log: f64) {
        if self.n_hits == 0 || !(self.p_hat > 0.0) {
            return;
        }
        let l = self.p_hat.ln();
        // Adding 0.0 turns -0.0 into 0.0.
        self.slope = Some(-l / self.speed + 0.0);
        self.slope_ci = Some((
            -(l + Z95 * se_log) / self.speed + 0.0,
            -(l - Z95 * se_log) / self.speed + 0.0,
        ));
    }

    /// Half-width of the probability interval.
    pub fn ci_half_width(&self) -> f64 {
        0.5 * (self.ci.1 - self.ci.0)
    }

    /// Cells in [`ESTIMATE_HEADER`] order; missing slopes are empty.
    pub fn csv_row(&self) -> Vec<String> {
        vec![
            fmt_real(self.scale),
            self.n_reps.to_string(),
            self.n_hits.to_string(),
            fmt_real(self.p_hat),
            fmt_real(self.ci.0),
            fmt_real(self.ci.1),
            fmt_opt(self.slope),
            fmt_opt(self.slope_ci.map(|c| c.0)),
            fmt_opt(self.slope_ci.map(|c| c.1)),
            fmt_real(self.target),
        ]
    }
}

/// Writes estimates with [`ESTIMATE_HEADER`].
pub fn write_estimates<W: Write>(w: W, rows: &[Estimate]) -> io::Result<()> {
    let rows: Vec<Vec<String>> = rows.iter().map(Estimate::csv_row).collect();
    write_table(w, &ESTIMATE_HEADER, &rows)
}

fn check_scales(scales: &[f64]) -> Result<()> {
    if scales.is_empty() {
        return Err(Error::InvalidArgument("at least one scale is needed".into()));
    }
    if scales.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
        return Err(Error::InvalidArgument("scales must be positive and finite".into()));
    }
    if scales.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument("scales must be strictly increasing".into()));
    }
    Ok(())
}

fn check_reps(n_reps: u64) -> Result<()> {
    if n_reps == 0 {
        return Err(Error::InvalidArgument("n_reps must be at least 1".into()));
    }
    Ok(())
}

/// Number of replications in which `hit` returns true.
fn count_hits<F>(n_reps: u64, seeds: &SeedSequence, hit: F) -> Result<u64>
where
    F: Fn(&mut rand_chacha::ChaCha8Rng) -> Result<bool> + Sync,
{
    (0..n_reps)
        .into_par_iter()
        .map(|i| hit(&mut seeds.stream(i)).map(u64::from))
        .try_reduce(|| 0, |a, b| Ok(a + b))
}

/// Probability of a one-sided threshold event on the scaled count.
#[derive(Debug, Clone, PartialEq)]
pub struct SlopeExperiment {
    pub model: ModelSpec,
    pub tail: Tail,
    /// Threshold `a` on the scaled count.
    pub level: f64,
    /// Horizons `t` or radii `r`, strictly increasing.
    pub scales: Vec<f64>,
    pub n_reps: u64,
    pub margin: Margin,
    pub seed: u64,
}

impl SlopeExperiment {
    /// `inf` of the rate over the event: `0` if the event contains the mean,
    /// else `Lambda*(a)` since the rate is monotone on each side of the mean.
    pub fn target(&self) -> f64 {
        let rate = self.model.rate();
        let mean = rate.mean();
        let contains_mean = match self.tail {
            Tail::Upper => self.level <= mean,
            Tail::Lower => self.level >= mean,
        };
        if contains_mean {
            0.0
        } else {
            rate.legendre(self.level)
        }
    }

    fn validate(&self) -> Result<()> {
        check_scales(&self.scales)?;
        check_reps(self.n_reps)?;
        if !self.level.is_finite() {
            return Err(Error::InvalidArgument("level must be finite".into()));
        }
        if self.level == self.model.rate().mean() {
            return Err(Error::InvalidArgument(
                "the level must differ from the mean, where the rate vanishes".into(),
            ));
        }
        if let Margin::Fixed(m) = self.margin {
            if !(m >= 0.0 && m.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "margin must be finite and nonnegative, got {m}"
                )));
            }
        }
        Ok(())
    }
}

fn in_tail(tail: Tail, count: u64, threshold: f64) -> bool {
    match tail {
        Tail::Upper => count as f64 >= threshold,
        Tail::Lower => count as f64 <= threshold,
    }
}

/// Plain Monte Carlo estimate of `P(N / v >= a)` (or `<= a`) at each scale,
/// with `N = N(0, t]` or `N(b(0, r))`.
pub fn run_scalar_slope(exp: &SlopeExperiment) -> Result<Vec<Estimate>> {
    exp.validate()?;
    let root = SeedSequence::new(exp.seed);
    let target = exp.target();
    let mut out = Vec::with_capacity(exp.scales.len());
    for (j, &scale) in exp.scales.iter().enumerate() {
        let j = j as u64;
        let seeds = root.derive(SCALAR).derive(j);
        let pilot = root.derive(MARGIN).derive(j);
        let speed = exp.model.speed(scale);
        let threshold = exp.level * speed;
        let hits = match &exp.model {
            ModelSpec::Temporal(spec) => {
                let margin = match exp.margin {
                    Margin::Auto => default_margin(spec, scale, &pilot)?,
                    Margin::Fixed(m) => m,
                };
                count_hits(exp.n_reps, &seeds, |rng| {
                    let n = count_truncated(spec, scale, margin, &[scale], rng)?[0];
                    Ok(in_tail(exp.tail, n, threshold))
                })?
            }
            ModelSpec::Spatial(spec) => {
                let margin = match exp.margin {
                    Margin::Auto => default_spatial_margin(spec, scale, &pilot)?,
                    Margin::Fixed(m) => m,
                };
                count_hits(exp.n_reps, &seeds, |rng| {
                    let n = count_ball(spec, scale, margin, rng)?;
                    Ok(in_tail(exp.tail, n, threshold))
                })?
            }
        };
        out.push(Estimate::from_hits(scale, speed, exp.n_reps, hits, target));
    }
    Ok(out)
}

/// Rectangle event on the scaled path at two times.
#[derive(Debug, Clone, PartialEq)]
pub struct PathExperiment {
    pub spec: TemporalSpec,
    /// `0 < t_1 < t_2 <= 1`.
    pub times: [f64; 2],
    /// Lower corner `(x_1, x_2)` of the rectangle.
    pub lower: [f64; 2],
    /// Upper corner; must be finite.
    pub upper: [f64; 2],
    /// Scales `alpha`, strictly increasing.
    pub scales: Vec<f64>,
    pub n_reps: u64,
    pub margin: Margin,
    pub seed: u64,
}

impl PathExperiment {
    fn validate(&self) -> Result<()> {
        check_scales(&self.scales)?;
        check_reps(self.n_reps)?;
        let [t1, t2] = self.times;
        if !(0.0 < t1 && t1 < t2 && t2 <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "times need 0 < t1 < t2 <= 1, got {t1}, {t2}"
            )));
        }
        for k in 0..2 {
            if !(self.lower[k].is_finite() && self.upper[k].is_finite() && self.lower[k] <= self.upper[k]) {
                return Err(Error::InvalidArgument(
                    "rectangle bounds must be finite with lower <= upper".into(),
                ));
            }
        }
        Ok(())
    }

    /// Minimum of the two-time rate over the rectangle.
    pub fn target(&self) -> Result<f64> {
        self.validate()?;
        let rate = ScalarRate::new(self.spec.nu(), self.spec.size_law().clone())?;
        rectangle_rate(&rate, self.times, self.lower, self.upper)
    }
}

/// Minimizes `J_{t1,t2}(x1, x2)` over `[lower, upper]` on a grid, zooming in
/// around the best grid point a few times. The objective is convex, so the
/// zoomed grids track the minimizer.
pub fn rectangle_rate(rate: &ScalarRate, times: [f64; 2], lower: [f64; 2], upper: [f64; 2]) -> Result<f64> {
    let mean = rate.mean();
    if (0..2).all(|k| lower[k] <= mean * times[k] && mean * times[k] <= upper[k]) {
        return Ok(0.0);
    }
    let j = |x1: f64, x2: f64| rate.finite_dim_rate(&times, &[x1, x2]);
    let (mut lo, mut hi) = (lower, upper);
    let mut best = (f64::INFINITY, lower);
    for round in 0..6 {
        let n = if round == 0 { 80 } else { 40 };
        let step = [(hi[0] - lo[0]) / n as f64, (hi[1] - lo[1]) / n as f64];
        for a in 0..=n {
            for b in 0..=n {
                let x = [lo[0] + step[0] * a as f64, lo[1] + step[1] * b as f64];
                let v = j(x[0], x[1])?;
                if v < best.0 {
                    best = (v, x);
                }
            }
        }
        for k in 0..2 {
            lo[k] = (best.1[k] - 2.0 * step[k]).max(lower[k]);
            hi[k] = (best.1[k] + 2.0 * step[k]).min(upper[k]);
        }
    }
    Ok(best.0)
}

/// Estimates `P((N(0, a t1] / a, N(0, a t2] / a) in rectangle)` at each
/// scale `a`.
pub fn run_finite_dim(exp: &PathExperiment) -> Result<Vec<Estimate>> {
    let target = exp.target()?;
    let root = SeedSequence::new(exp.seed);
    let mut out = Vec::with_capacity(exp.scales.len());
    for (j, &alpha) in exp.scales.iter().enumerate() {
        let j = j as u64;
        let seeds = root.derive(PATH).derive(j);
        let margin = match exp.margin {
            Margin::Auto => default_margin(&exp.spec, alpha, &root.derive(MARGIN).derive(j))?,
            Margin::Fixed(m) => m,
        };
        let bounds = [alpha * exp.times[0], alpha * exp.times[1]];
        let hits = count_hits(exp.n_reps, &seeds, |rng| {
            let counts = count_truncated(&exp.spec, alpha, margin, &bounds, rng)?;
            Ok((0..2).all(|k| {
                let n = counts[k] as f64;
                n >= exp.lower[k] * alpha && n <= exp.upper[k] * alpha
            }))
        })?;
        out.push(Estimate::from_hits(alpha, alpha, exp.n_reps, hits, target));
    }
    Ok(out)
}

/// Exact pmf of the compound Poisson sum `C` with `Poisson(lambda_total)`
/// terms drawn from `law`, on `0..=nmax`, by the Panjer recursion
///
/// ```text
/// p(0) = exp(-lambda),   p(n) = (lambda / n) sum_{k=1..n} k q_k p(n - k).
/// ```
///
/// The recursion runs on rescaled values so that large `lambda` does not
/// underflow. Fails if more than `1e-12` of the mass lies beyond `nmax`.
pub fn panjer_pmf(lambda_total: f64, law: &ClusterSizeLaw, nmax: usize) -> Result<Vec<f64>> {
    positive("lambda_total", lambda_total)?;
    let q: Vec<f64> = (0..=nmax)
        .map(|k| if k == 0 { 0.0 } else { law.pmf(k as u64) })
        .collect();
    let mut scaled = vec![0.0; nmax + 1];
    scaled[0] = 1.0;
    // p(n) = scaled[n] * exp(log_scale - lambda)
    let mut log_scale = 0.0;
    for n in 1..=nmax {
        let s: f64 = (1..=n).map(|k| k as f64 * q[k] * scaled[n - k]).sum();
        scaled[n] = lambda_total / n as f64 * s;
        if scaled[n] > 1e250 {
            scaled[..=n].iter_mut().for_each(|v| *v *= 1e-250);
            log_scale += 250.0 * std::f64::consts::LN_10;
        }
    }
    let pmf: Vec<f64> = scaled
        .iter()
        .map(|&v| {
            if v > 0.0 {
                (v.ln() + log_scale - lambda_total).exp()
            } else {
                0.0
            }
        })
        .collect();
    let tail = 1.0 - pmf.iter().sum::<f64>();
    if tail > 1e-12 {
        return Err(Error::TailMass { nmax, tail });
    }
    Ok(pmf)
}

/// `P(C >= k)` from a pmf, summed from the top.
pub fn upper_tail(pmf: &[f64], k: usize) -> f64 {
    pmf.iter().skip(k).rev().sum()
}

/// The compound Poisson surrogate `C(t)` under the exponential change of
/// measure with parameter `theta`.
///
/// Under the tilted law the number of clusters is Poisson(`nu t phi`) with
/// `phi = E[exp(theta S)]` and the sizes have pmf `exp(theta k) p_k / phi`.
/// The likelihood ratio of a draw `C` is `exp(-theta C + t Lambda(theta))`.
#[derive(Debug, Clone, PartialEq)]
pub struct TiltedCompound {
    theta: f64,
    t: f64,
    log_norm: f64,
    mean_count: f64,
    law: ClusterSizeLaw,
    cap: u64,
}

impl TiltedCompound {
    pub fn new(rate: &ScalarRate, t: f64, theta: f64) -> Result<Self> {
        positive("t", t)?;
        let law = rate.law().tilted(theta)?;
        let phi = rate.law().mgf(theta);
        Ok(Self {
            theta,
            t,
            log_norm: t * rate.lambda(theta),
            mean_count: rate.nu() * t * phi,
            law,
            cap: crate::distributions::DEFAULT_PROGENY_CAP,
        })
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn horizon(&self) -> f64 {
        self.t
    }

    /// Draws `C` under the tilted law together with its likelihood ratio.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<(u64, f64)> {
        let c = compound_poisson(self.mean_count, &self.law, self.cap, rng)?;
        Ok((c, self.weight(c)))
    }

    pub fn weight(&self, c: u64) -> f64 {
        (-self.theta * c as f64 + self.log_norm).exp()
    }
}

fn check_tail_level(rate: &ScalarRate, a: f64) -> Result<()> {
    if !(a > rate.mean() && a.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "level {a} must exceed the mean {}",
            rate.mean()
        )));
    }
    Ok(())
}

/// Importance sampling estimate of `P(C(t) >= a t)` for `a` above the mean,
/// tilting at `theta_a`.
pub fn tilted_tail_compound(rate: &ScalarRate, t: f64, a: f64, n_reps: u64, seeds: &SeedSequence) -> Result<Estimate> {
    check_tail_level(rate, a)?;
    check_reps(n_reps)?;
    let theta = rate.tilt(a)?.theta();
    let sampler = TiltedCompound::new(rate, t, theta)?;
    let seeds = seeds.derive(TILTED);
    let threshold = a * t;
    let values: Vec<f64> = (0..n_reps)
        .into_par_iter()
        .map(|i| {
            let (c, w) = sampler.sample(&mut seeds.stream(i))?;
            Ok(if c as f64 >= threshold { w } else { 0.0 })
        })
        .collect::<Result<_>>()?;
    let hits = values.iter().filter(|&&v| v > 0.0).count() as u64;
    let (mean, se) = mean_and_se(&values);
    Ok(Estimate::from_weighted(t, t, n_reps, hits, mean, se, rate.legendre(a)))
}

/// Plain Monte Carlo estimate of `P(C(t) >= a t)`.
pub fn plain_tail_compound(rate: &ScalarRate, t: f64, a: f64, n_reps: u64, seeds: &SeedSequence) -> Result<Estimate> {
    check_tail_level(rate, a)?;
    check_reps(n_reps)?;
    positive("t", t)?;
    let seeds = seeds.derive(PLAIN);
    let threshold = a * t;
    let cap = crate::distributions::DEFAULT_PROGENY_CAP;
    let hits = count_hits(n_reps, &seeds, |rng| {
        let c = compound_poisson(rate.nu() * t, rate.law(), cap, rng)?;
        Ok(c as f64 >= threshold)
    })?;
    Ok(Estimate::from_hits(t, t, n_reps, hits, rate.legendre(a)))
}

/// Void probabilities of `b(0, r)` over increasing radii.
#[derive(Debug, Clone, PartialEq)]
pub struct VoidExperiment {
    pub spec: SpatialSpec,
    pub radii: Vec<f64>,
    pub margin: Margin,
    pub n_reps: u64,
    pub seed: u64,
}

impl VoidExperiment {
    /// Radii at which fewer than 10 void replications are expected even
    /// for the Poisson process, which bounds `v(r)` from above.
    pub fn warnings(&self) -> Vec<String> {
        self.radii
            .iter()
            .filter(|&&r| (-self.spec.nu() * omega_d(self.spec.dim(), r)).exp() * (self.n_reps as f64) < 10.0)
            .map(|r| {
                format!("radius {r}: fewer than 10 void replications expected; nu is too large for plain Monte Carlo")
            })
            .collect()
    }
}

/// One radius of a void experiment: `slope = -log v_hat / omega_d(r)`,
/// target `nu`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoidRow {
    pub estimate: Estimate,
    pub empty: EmptySpace,
}

pub fn run_void_experiment(exp: &VoidExperiment) -> Result<Vec<VoidRow>> {
    check_scales(&exp.radii)?;
    check_reps(exp.n_reps)?;
    let root = SeedSequence::new(exp.seed);
    let spec = &exp.spec;
    let mut out = Vec::with_capacity(exp.radii.len());
    for (j, &r) in exp.radii.iter().enumerate() {
        let j = j as u64;
        let margin = match exp.margin {
            Margin::Auto => default_spatial_margin(spec, r, &root.derive(MARGIN).derive(j))?,
            Margin::Fixed(m) => m,
        };
        let seeds = root.derive(VOID).derive(j);
        let voids = count_hits(exp.n_reps, &seeds, |rng| is_void(spec, r, margin, rng))?;
        let speed = omega_d(spec.dim(), r);
        let estimate = Estimate::from_hits(r, speed, exp.n_reps, voids, spec.nu());
        let empty = empty_space(estimate.p_hat, spec.dim(), r)?;
        out.push(VoidRow { estimate, empty });
    }
    Ok(out)
}

/// Writes void rows: the estimate columns followed by `e_hat,double_log`.
pub fn write_void_rows<W: Write>(w: W, rows: &[VoidRow]) -> io::Result<()> {
    let mut header = ESTIMATE_HEADER.to_vec();
    header.extend(["e_hat", "double_log"]);
    let rows: Vec<Vec<String>> = rows
        .iter()
        .map(|row| {
            let mut cells = row.estimate.csv_row();
            cells.push(fmt_real(row.empty.e_hat));
            cells.push(fmt_opt(row.empty.double_log));
            cells
        })
        .collect();
    write_table(w, &header, &rows)
}
