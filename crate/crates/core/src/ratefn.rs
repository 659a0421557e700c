//! Large-deviations rate functions of cluster-process counts.
//!
//! For a Poisson cluster process with immigrant intensity `nu` and cluster
//! size `S`, the scaled count `N(0, t] / t` has limiting log-MGF
//!
//! ```text
//! Lambda(theta) = nu (E[exp(theta S)] - 1)
//! ```
//!
//! and rate function `Lambda*(x) = sup_theta (theta x - Lambda(theta))`.
//! For `x > 0` the supremum is attained at the tilt `theta_x` solving
//! `Lambda'(theta) = x`. For `x = 0` it equals `nu` (since `S >= 1`) and it
//! is `+inf` for `x < 0`.
//!
//! All functions return `f64` with `f64::INFINITY` standing for `+inf`;
//! nothing is encoded as a large finite number.
//!
//! For the Hawkes (Borel) law the tilt has the closed form
//! `theta_x = ln(y) - mu (y - 1)` with `y = x / (nu + mu x)`, and
//! `Lambda*(x) = x theta_x + nu - nu y`; see [`hawkes_rate`].
//!
//! The Borel law has a closed effective domain, for which the sample-path
//! large deviations principle is only conjectured. [`ScalarRate::path_rate`]
//! evaluates the functional regardless.

use crate::distributions::ClusterSizeLaw;
use crate::error::{positive, Error, Result};
use crate::roots::newton_bisect;

/// Absolute tolerance of the tilt root finder, in `theta`.
pub const TILT_TOL: f64 = 1e-12;
const TILT_MAX_ITER: usize = 500;

/// Below this level `Lambda*` is evaluated without root finding.
const SMALL_X: f64 = 1e-8;
/// Left end of the `theta` search used for tiny `x` on non-Borel laws.
const SMALL_X_THETA_MIN: f64 = -50.0;

/// `Lambda` and `Lambda*` for a given immigrant intensity and cluster law.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarRate {
    nu: f64,
    law: ClusterSizeLaw,
}

/// Where the supremum defining `Lambda*(x)` is attained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Tilt {
    /// The unique interior solution of `Lambda'(theta) = x`.
    Interior(f64),
    /// `Lambda'` stays below `x` on the open domain; the supremum sits at
    /// the closed boundary `theta0`.
    Boundary(f64),
}

impl Tilt {
    pub fn theta(self) -> f64 {
        match self {
            Tilt::Interior(t) | Tilt::Boundary(t) => t,
        }
    }
}

impl ScalarRate {
    pub fn new(nu: f64, law: ClusterSizeLaw) -> Result<Self> {
        positive("nu", nu)?;
        Ok(Self { nu, law })
    }

    pub fn hawkes(nu: f64, mu: f64) -> Result<Self> {
        Self::new(nu, ClusterSizeLaw::borel(mu)?)
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn law(&self) -> &ClusterSizeLaw {
        &self.law
    }

    /// The law of large numbers limit `nu E[S]`, the unique zero of `Lambda*`.
    pub fn mean(&self) -> f64 {
        self.nu * self.law.mean()
    }

    /// `nu (E[exp(theta S)] - 1)`; `+inf` outside the effective domain.
    pub fn lambda(&self, theta: f64) -> f64 {
        let m = self.law.mgf(theta);
        if m.is_infinite() {
            f64::INFINITY
        } else {
            self.nu * (m - 1.0)
        }
    }

    /// `Lambda'(theta) = nu E[S exp(theta S)]`.
    pub fn lambda_prime(&self, theta: f64) -> f64 {
        self.nu * self.law.mgf_derivative(theta)
    }

    /// Solves `Lambda'(theta) = x` for `x > 0`.
    ///
    /// The equation is solved for `ln Lambda'(theta) = ln x` with a
    /// bracketed Newton iteration. The bracket grows geometrically from
    /// `theta = 0` until it straddles the root; on the upper side it stops
    /// at `theta0 - 1e-12` when the domain is bounded.
    pub fn tilt(&self, x: f64) -> Result<Tilt> {
        if !(x > 0.0) || !x.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "tilt needs a finite level x > 0, got {x}"
            )));
        }
        let ln_target = (x / self.nu).ln();
        let g = |theta: f64| {
            let d1 = self.law.mgf_derivative(theta);
            let d2 = self.law.mgf_second_derivative(theta);
            (d1.ln() - ln_target, d2 / d1)
        };
        let g0 = g(0.0).0;
        if g0 == 0.0 {
            return Ok(Tilt::Interior(0.0));
        }
        let (lo, hi) = if g0 > 0.0 {
            let mut lo = -1.0;
            while g(lo).0 > 0.0 {
                lo *= 2.0;
                if lo < -1e300 {
                    return Err(Error::RootFinding(format!("no lower bracket for x = {x}")));
                }
            }
            (lo, 0.0)
        } else {
            let sup = self.law.domain_sup();
            if sup.theta0.is_finite() {
                let hi = sup.theta0 - TILT_TOL.min(0.5 * sup.theta0);
                if g(hi).0 < 0.0 {
                    return Ok(Tilt::Boundary(sup.theta0));
                }
                (0.0, hi)
            } else {
                let mut hi = 1.0;
                while g(hi).0 < 0.0 {
                    hi *= 2.0;
                    if hi > 1e300 {
                        return Err(Error::RootFinding(format!("no upper bracket for x = {x}")));
                    }
                }
                (0.0, hi)
            }
        };
        newton_bisect(g, lo, hi, TILT_TOL, TILT_MAX_ITER).map(Tilt::Interior)
    }

    /// `Lambda*(x) = sup_theta (theta x - Lambda(theta))`.
    pub fn legendre(&self, x: f64) -> f64 {
        if x.is_nan() {
            return f64::NAN;
        }
        if x < 0.0 || x == f64::INFINITY {
            return f64::INFINITY;
        }
        if x == 0.0 {
            return self.nu;
        }
        if x < SMALL_X {
            return match &self.law {
                ClusterSizeLaw::Borel(b) => hawkes_rate_unchecked(self.nu, b.mu(), x),
                ClusterSizeLaw::Table(_) => self.small_x_sup(x),
            };
        }
        match self.tilt(x) {
            Ok(t) => {
                let theta = t.theta();
                theta * x - self.lambda(theta)
            }
            // Only reachable through non-finite intermediate values; the
            // grid supremum is a safe fallback.
            Err(_) => self.small_x_sup(x),
        }
    }

    /// Supremum of the concave map `theta x - Lambda(theta)` over
    /// `[-50, 0]` by golden-section search.
    fn small_x_sup(&self, x: f64) -> f64 {
        let f = |theta: f64| theta * x - self.lambda(theta);
        let (mut a, mut b) = (SMALL_X_THETA_MIN, 0.0);
        let ratio = 0.5 * (5f64.sqrt() - 1.0);
        let mut c = b - ratio * (b - a);
        let mut d = a + ratio * (b - a);
        let (mut fc, mut fd) = (f(c), f(d));
        while b - a > 1e-12 {
            if fc > fd {
                b = d;
                d = c;
                fd = fc;
                c = b - ratio * (b - a);
                fc = f(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + ratio * (b - a);
                fd = f(d);
            }
        }
        f(SMALL_X_THETA_MIN).max(f(0.0)).max(f(0.5 * (a + b)))
    }

    /// `J(f) = integral over [0, 1] of Lambda*(f')` for a piecewise-linear `f`.
    ///
    /// When the MGF domain is closed, as for the Borel law, the sample-path
    /// large deviation principle with rate `J` is only conjectured; `J` is
    /// evaluated the same way regardless.
    pub fn path_rate(&self, path: &PiecewiseLinearPath) -> f64 {
        let increments = path
            .breakpoints
            .windows(2)
            .zip(path.values.windows(2))
            .map(|(s, x)| (s[1] - s[0], x[1] - x[0]));
        self.segment_sum(increments)
    }

    /// `sum_j (t_j - t_{j-1}) Lambda*((x_j - x_{j-1}) / (t_j - t_{j-1}))`
    /// with `t_0 = 0` and `x_0 = 0`.
    ///
    /// Times must be strictly increasing in `[0, 1]`. If `t_1 = 0` the first
    /// term is `0` when `x_1 = 0` and `+inf` otherwise.
    pub fn finite_dim_rate(&self, times: &[f64], values: &[f64]) -> Result<f64> {
        if times.is_empty() || times.len() != values.len() {
            return Err(Error::InvalidArgument(
                "times and values must be nonempty and of equal length".into(),
            ));
        }
        if times.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(Error::InvalidArgument("times must lie in [0, 1]".into()));
        }
        if times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument("times must be strictly increasing".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("values must be finite".into()));
        }
        let mut prev = (0.0, 0.0);
        let increments = times.iter().zip(values).map(move |(&t, &x)| {
            let inc = (t - prev.0, x - prev.1);
            prev = (t, x);
            inc
        });
        Ok(self.segment_sum(increments))
    }

    fn segment_sum(&self, increments: impl Iterator<Item = (f64, f64)>) -> f64 {
        let mut total = 0.0;
        for (ds, dx) in increments {
            let term = if ds == 0.0 {
                if dx == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            } else {
                ds * self.legendre(dx / ds)
            };
            if term == f64::INFINITY {
                return f64::INFINITY;
            }
            total += term;
        }
        total
    }
}

/// `Lambda(theta)` for a given rate.
pub fn lambda(rate: &ScalarRate, theta: f64) -> f64 {
    rate.lambda(theta)
}

/// `Lambda*(x)` by numerical Legendre transform.
pub fn legendre(rate: &ScalarRate, x: f64) -> f64 {
    rate.legendre(x)
}

/// The tilt `theta_x`.
pub fn tilt(rate: &ScalarRate, x: f64) -> Result<f64> {
    rate.tilt(x).map(Tilt::theta)
}

/// Closed-form `theta_x` for the Hawkes process, `x > 0`.
pub fn hawkes_tilt(nu: f64, mu: f64, x: f64) -> Result<f64> {
    ScalarRate::hawkes(nu, mu)?;
    if !(x > 0.0) {
        return Err(Error::InvalidArgument(format!("tilt needs x > 0, got {x}")));
    }
    let y = x / (nu + mu * x);
    Ok(y.ln() - mu * (y - 1.0))
}

/// Closed-form rate function of the Hawkes process.
pub fn hawkes_rate(nu: f64, mu: f64, x: f64) -> Result<f64> {
    ScalarRate::hawkes(nu, mu)?;
    Ok(hawkes_rate_unchecked(nu, mu, x))
}

fn hawkes_rate_unchecked(nu: f64, mu: f64, x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x < 0.0 || x == f64::INFINITY {
        return f64::INFINITY;
    }
    if x == 0.0 {
        return nu;
    }
    let y = x / (nu + mu * x);
    let theta = y.ln() - mu * (y - 1.0);
    x * theta + nu - nu * y
}

/// A continuous piecewise-linear path on `[0, 1]` starting at `0`.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseLinearPath {
    breakpoints: Vec<f64>,
    values: Vec<f64>,
}

impl PiecewiseLinearPath {
    /// Breakpoints must run strictly increasing from `0` to `1`, and the
    /// value at `0` must be `0`.
    pub fn new(breakpoints: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if breakpoints.len() < 2 || breakpoints.len() != values.len() {
            return Err(Error::InvalidArgument(
                "a path needs at least two breakpoints and one value per breakpoint".into(),
            ));
        }
        if breakpoints[0] != 0.0 || *breakpoints.last().unwrap() != 1.0 {
            return Err(Error::InvalidArgument(
                "breakpoints must start at 0 and end at 1".into(),
            ));
        }
        if breakpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument("breakpoints must be strictly increasing".into()));
        }
        if values[0] != 0.0 {
            return Err(Error::InvalidArgument("paths start at 0".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("path values must be finite".into()));
        }
        Ok(Self { breakpoints, values })
    }

    /// `f(s) = slope * s`.
    pub fn linear(slope: f64) -> Result<Self> {
        Self::new(vec![0.0, 1.0], vec![0.0, slope])
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Linear interpolation at `s` in `[0, 1]`.
    pub fn eval(&self, s: f64) -> f64 {
        let i = self
            .breakpoints
            .partition_point(|&b| b <= s)
            .clamp(1, self.breakpoints.len() - 1);
        let (s0, s1) = (self.breakpoints[i - 1], self.breakpoints[i]);
        let (x0, x1) = (self.values[i - 1], self.values[i]);
        x0 + (x1 - x0) * (s - s0) / (s1 - s0)
    }
}
