//! Spatial Poisson cluster and Hawkes processes in `R^d`.
//!
//! Immigrants are a homogeneous Poisson process of intensity `nu` per unit
//! volume, restricted to the ball `b(0, r + R)`: `r` is the observation
//! radius and `R` the margin. Clusters are generated exactly as in the
//! temporal module, with displacements drawn from an isotropic kernel.
//!
//! The void probability `v(r) = P(N(b(0, r)) = 0)` decays like
//! `exp(-nu omega_d(r))`, and `v(r) <= exp(-nu omega_d(r))` at every `r`.
//! [`estimate_void`] estimates it from independent realizations.

use std::io::{self, Write};

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use statrs::function::gamma::ln_gamma;

use crate::distributions::{ClusterSizeLaw, DEFAULT_PROGENY_CAP};
use crate::error::{positive, Error, Result};
use crate::output::fmt_real;
use crate::rng::SeedSequence;
use crate::simulate::{TemporalKernel, MARGIN_TOLERANCE, PILOT_CLUSTERS};
use crate::stats::{wilson, Z95};

/// Volume of the `d`-dimensional ball of radius `r`.
pub fn omega_d(d: usize, r: f64) -> f64 {
    if d == 0 {
        return 1.0;
    }
    if r == 0.0 {
        return 0.0;
    }
    let half = 0.5 * d as f64;
    (d as f64 * r.ln() + half * std::f64::consts::PI.ln() - ln_gamma(1.0 + half)).exp()
}

/// Normalized offspring displacement density on `R^d`.
#[derive(Debug, Clone, PartialEq)]
pub enum SpatialKernel {
    /// Independent `N(0, sigma^2)` coordinates.
    Gaussian { sigma: f64 },
    /// Uniform on the ball of radius `rho`.
    UniformBall { rho: f64 },
    /// One-sided displacement on the line (`d = 1` only), drawn from a
    /// temporal kernel. Matches the temporal simulator on shifted windows.
    HalfLine(TemporalKernel),
}

impl SpatialKernel {
    pub fn gaussian(sigma: f64) -> Result<Self> {
        positive("sigma", sigma)?;
        Ok(SpatialKernel::Gaussian { sigma })
    }

    pub fn uniform_ball(rho: f64) -> Result<Self> {
        positive("rho", rho)?;
        Ok(SpatialKernel::UniformBall { rho })
    }

    fn validate(&self, d: usize) -> Result<()> {
        match self {
            SpatialKernel::Gaussian { sigma } => positive("sigma", *sigma).map(drop),
            SpatialKernel::UniformBall { rho } => positive("rho", *rho).map(drop),
            SpatialKernel::HalfLine(k) => {
                if d != 1 {
                    return Err(Error::InvalidKernel("half-line kernels need d = 1".into()));
                }
                k.validate()
            }
        }
    }

    /// Adds one displacement to `point`.
    fn displace<R: Rng + ?Sized>(&self, point: &mut [f64], rng: &mut R) {
        match self {
            SpatialKernel::Gaussian { sigma } => {
                for x in point.iter_mut() {
                    let z: f64 = StandardNormal.sample(rng);
                    *x += sigma * z;
                }
            }
            SpatialKernel::UniformBall { rho } => add_uniform_in_ball(point, *rho, rng),
            SpatialKernel::HalfLine(k) => point[0] += k.sample(rng),
        }
    }
}

/// Adds a uniform point of `b(0, radius)`: radius `radius U^(1/d)` times a
/// normalized Gaussian direction.
fn add_uniform_in_ball<R: Rng + ?Sized>(point: &mut [f64], radius: f64, rng: &mut R) {
    let d = point.len();
    let mut dir = [0.0f64; 8];
    let mut heap;
    let dir: &mut [f64] = if d <= dir.len() {
        &mut dir[..d]
    } else {
        heap = vec![0.0; d];
        &mut heap
    };
    let norm = loop {
        for z in dir.iter_mut() {
            *z = StandardNormal.sample(rng);
        }
        let n = dir.iter().map(|z| z * z).sum::<f64>().sqrt();
        if n > 0.0 {
            break n;
        }
    };
    let u: f64 = rng.random();
    let scale = radius * u.powf(1.0 / d as f64) / norm;
    for (x, z) in point.iter_mut().zip(dir.iter()) {
        *x += scale * z;
    }
}

/// Model of a spatial Poisson cluster process.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialSpec {
    d: usize,
    nu: f64,
    size_law: ClusterSizeLaw,
    kernel: SpatialKernel,
    progeny_cap: u64,
}

impl SpatialSpec {
    /// Spatial Hawkes process with Borel(`mu`) clusters.
    pub fn hawkes(d: usize, nu: f64, mu: f64, kernel: SpatialKernel) -> Result<Self> {
        Self::new(d, nu, ClusterSizeLaw::borel(mu)?, kernel)
    }

    pub fn new(d: usize, nu: f64, size_law: ClusterSizeLaw, kernel: SpatialKernel) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidArgument("dimension must be at least 1".into()));
        }
        positive("nu", nu)?;
        kernel.validate(d)?;
        Ok(Self {
            d,
            nu,
            size_law,
            kernel,
            progeny_cap: DEFAULT_PROGENY_CAP,
        })
    }

    pub fn with_progeny_cap(mut self, cap: u64) -> Self {
        self.progeny_cap = cap;
        self
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn mu(&self) -> Option<f64> {
        match &self.size_law {
            ClusterSizeLaw::Borel(b) => Some(b.mu()),
            ClusterSizeLaw::Table(_) => None,
        }
    }

    pub fn size_law(&self) -> &ClusterSizeLaw {
        &self.size_law
    }

    pub fn kernel(&self) -> &SpatialKernel {
        &self.kernel
    }

    pub fn progeny_cap(&self) -> u64 {
        self.progeny_cap
    }

    /// Stationary intensity `nu E[S]`.
    pub fn intensity(&self) -> f64 {
        self.nu * self.size_law.mean()
    }
}

/// One cluster: flat coordinates (`d` per point, center first).
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialCluster {
    pub points: Vec<f64>,
    pub generations: Vec<u32>,
    /// Largest distance of a point from the center.
    pub radius: f64,
}

impl SpatialCluster {
    pub fn size(&self) -> usize {
        self.generations.len()
    }

    pub fn point(&self, i: usize, d: usize) -> &[f64] {
        &self.points[i * d..(i + 1) * d]
    }
}

/// Generates the cluster rooted at `center`.
pub fn sample_spatial_cluster<R: Rng + ?Sized>(
    spec: &SpatialSpec,
    center: &[f64],
    rng: &mut R,
) -> Result<SpatialCluster> {
    let d = spec.d;
    assert_eq!(center.len(), d, "center has the wrong dimension");
    let cap = spec.progeny_cap;
    let mut points = center.to_vec();
    let mut generations = vec![0u32];
    let mut scratch = vec![0.0; d];
    match &spec.size_law {
        ClusterSizeLaw::Borel(b) => {
            let offspring = Poisson::new(b.mu()).expect("mu is positive");
            let mut next = 0;
            while next < generations.len() {
                let children = offspring.sample(rng) as u64;
                if generations.len() as u64 + children > cap {
                    return Err(Error::ClusterCap { cap });
                }
                for _ in 0..children {
                    scratch.copy_from_slice(&points[next * d..(next + 1) * d]);
                    spec.kernel.displace(&mut scratch, rng);
                    points.extend_from_slice(&scratch);
                    generations.push(generations[next] + 1);
                }
                next += 1;
            }
        }
        ClusterSizeLaw::Table(t) => {
            let size = t.sample(rng);
            if size > cap {
                return Err(Error::ClusterCap { cap });
            }
            for _ in 1..size {
                scratch.copy_from_slice(center);
                spec.kernel.displace(&mut scratch, rng);
                points.extend_from_slice(&scratch);
            }
            generations.resize(size as usize, 1);
        }
    }
    let radius = points.chunks_exact(d).map(|p| distance(p, center)).fold(0.0, f64::max);
    Ok(SpatialCluster {
        points,
        generations,
        radius,
    })
}

fn norm(p: &[f64]) -> f64 {
    p.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn distance(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

fn check_radii(r: f64, margin: f64) -> Result<()> {
    positive("r", r)?;
    if !(margin >= 0.0 && margin.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "margin must be finite and nonnegative, got {margin}"
        )));
    }
    Ok(())
}

/// Immigrants of `b(0, extent)`, one per call of `visit`, in draw order.
fn for_each_immigrant<R, F>(spec: &SpatialSpec, extent: f64, rng: &mut R, mut visit: F) -> Result<()>
where
    R: Rng + ?Sized,
    F: FnMut(&[f64], &mut R) -> Result<bool>,
{
    let mean = spec.nu * omega_d(spec.d, extent);
    let n = if mean > 0.0 {
        Poisson::new(mean).expect("positive mean").sample(rng) as u64
    } else {
        0
    };
    let mut center = vec![0.0; spec.d];
    for _ in 0..n {
        center.iter_mut().for_each(|x| *x = 0.0);
        add_uniform_in_ball(&mut center, extent, rng);
        if !visit(&center, rng)? {
            break;
        }
    }
    Ok(())
}

/// The process with immigrants restricted to `b(0, r + R)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialRealization {
    d: usize,
    radius: f64,
    margin: f64,
    immigrants: Vec<f64>,
    clusters: Vec<SpatialCluster>,
    sorted_norms: Vec<f64>,
}

/// Simulates the truncated spatial process observed on `b(0, r)`.
pub fn simulate_spatial<R: Rng + ?Sized>(
    spec: &SpatialSpec,
    r: f64,
    margin: f64,
    rng: &mut R,
) -> Result<SpatialRealization> {
    check_radii(r, margin)?;
    let mut immigrants = Vec::new();
    let mut clusters = Vec::new();
    for_each_immigrant(spec, r + margin, rng, |c, rng| {
        immigrants.extend_from_slice(c);
        clusters.push(sample_spatial_cluster(spec, c, rng)?);
        Ok(true)
    })?;
    let mut sorted_norms: Vec<f64> = clusters
        .iter()
        .flat_map(|c| c.points.chunks_exact(spec.d).map(norm))
        .collect();
    sorted_norms.sort_unstable_by(f64::total_cmp);
    Ok(SpatialRealization {
        d: spec.d,
        radius: r,
        margin,
        immigrants,
        clusters,
        sorted_norms,
    })
}

impl SpatialRealization {
    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn margin(&self) -> f64 {
        self.margin
    }

    /// Flat immigrant coordinates.
    pub fn immigrants(&self) -> &[f64] {
        &self.immigrants
    }

    pub fn clusters(&self) -> &[SpatialCluster] {
        &self.clusters
    }

    pub fn len(&self) -> usize {
        self.sorted_norms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted_norms.is_empty()
    }

    /// Number of points with norm at most `r`. Only exact for the truncated
    /// process when `r` does not exceed the observation radius.
    pub fn count_in_ball(&self, r: f64) -> u64 {
        self.sorted_norms.partition_point(|&n| n <= r) as u64
    }

    /// Number of points within distance `r` of `center`.
    pub fn count_in_ball_at(&self, center: &[f64], r: f64) -> u64 {
        assert_eq!(center.len(), self.d, "center has the wrong dimension");
        self.clusters
            .iter()
            .flat_map(|c| c.points.chunks_exact(self.d))
            .filter(|p| distance(p, center) <= r)
            .count() as u64
    }

    /// Writes `cluster_id,generation,x_1,...,x_d`, one row per point.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let coords: Vec<String> = (1..=self.d).map(|i| format!("x_{i}")).collect();
        writeln!(w, "cluster_id,generation,{}", coords.join(","))?;
        for (id, c) in self.clusters.iter().enumerate() {
            for (i, g) in c.generations.iter().enumerate() {
                write!(w, "{id},{g}")?;
                for x in c.point(i, self.d) {
                    write!(w, ",{}", fmt_real(*x))?;
                }
                writeln!(w)?;
            }
        }
        Ok(())
    }
}

/// `N(b(0, r))` for the realization that [`simulate_spatial`] would produce
/// from the same `rng` state, without storing it.
pub fn count_ball<R: Rng + ?Sized>(spec: &SpatialSpec, r: f64, margin: f64, rng: &mut R) -> Result<u64> {
    check_radii(r, margin)?;
    let mut count = 0;
    for_each_immigrant(spec, r + margin, rng, |c, rng| {
        let cluster = sample_spatial_cluster(spec, c, rng)?;
        count += cluster.points.chunks_exact(spec.d).filter(|p| norm(p) <= r).count() as u64;
        Ok(true)
    })?;
    Ok(count)
}

/// Whether the truncated process has no point in `b(0, r)`. Stops at the
/// first cluster that reaches the ball.
pub fn is_void<R: Rng + ?Sized>(spec: &SpatialSpec, r: f64, margin: f64, rng: &mut R) -> Result<bool> {
    check_radii(r, margin)?;
    let mut void = true;
    for_each_immigrant(spec, r + margin, rng, |c, rng| {
        let cluster = sample_spatial_cluster(spec, c, rng)?;
        void = cluster.points.chunks_exact(spec.d).all(|p| norm(p) > r);
        Ok(void)
    })?;
    Ok(void)
}

/// Plain Monte Carlo estimate of `v(r)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoidEstimate {
    pub r: f64,
    pub n_reps: u64,
    pub n_void: u64,
    pub v_hat: f64,
    /// 95% Wilson interval.
    pub ci: (f64, f64),
}

/// Estimates `v(r)` from `n_reps` independent realizations; replication `i`
/// uses stream `i` of `seeds`.
pub fn estimate_void(
    spec: &SpatialSpec,
    r: f64,
    margin: f64,
    n_reps: u64,
    seeds: &SeedSequence,
) -> Result<VoidEstimate> {
    if n_reps == 0 {
        return Err(Error::InvalidArgument("n_reps must be at least 1".into()));
    }
    check_radii(r, margin)?;
    let n_void = (0..n_reps)
        .into_par_iter()
        .map(|i| is_void(spec, r, margin, &mut seeds.stream(i)).map(u64::from))
        .try_reduce(|| 0, |a, b| Ok(a + b))?;
    Ok(VoidEstimate {
        r,
        n_reps,
        n_void,
        v_hat: n_void as f64 / n_reps as f64,
        ci: wilson(n_void, n_reps, Z95),
    })
}

/// Empty space function and its double-log diagnostic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmptySpace {
    pub e_hat: f64,
    /// `log(log(1 / e_hat)) / omega_d(r)`; `None` when `e_hat` is 0 or 1.
    pub double_log: Option<f64>,
}

/// `e = 1 - v` together with `log(log(1/e)) / omega_d(r)`, which tends to
/// `-nu` as `r` grows.
pub fn empty_space(v_hat: f64, d: usize, r: f64) -> Result<EmptySpace> {
    if !(0.0..=1.0).contains(&v_hat) {
        return Err(Error::InvalidArgument(format!("v_hat must lie in [0, 1], got {v_hat}")));
    }
    let e_hat = 1.0 - v_hat;
    // log(1/e) = -log(1 - v), accurate for small v.
    let inner = -(-v_hat).ln_1p();
    let double_log = (inner > 0.0 && inner.is_finite()).then(|| inner.ln() / omega_d(d, r));
    Ok(EmptySpace { e_hat, double_log })
}

/// Default margin for observation radius `r`.
///
/// The smallest `R` with `nu E[((L + r)^d / r^d - 1) 1{L > R}] < 1e-4`,
/// i.e. the expected number of immigrants per unit observed volume that lie
/// beyond `r + R` yet could reach `b(0, r)` is negligible. The expectation
/// uses [`PILOT_CLUSTERS`] pilot cluster radii drawn from `seeds`.
pub fn default_spatial_margin(spec: &SpatialSpec, r: f64, seeds: &SeedSequence) -> Result<f64> {
    positive("r", r)?;
    let origin = vec![0.0; spec.d];
    let mut radii = (0..PILOT_CLUSTERS as u64)
        .map(|i| sample_spatial_cluster(spec, &origin, &mut seeds.stream(i)).map(|c| c.radius))
        .collect::<Result<Vec<_>>>()?;
    radii.sort_by(|a, b| b.total_cmp(a));
    let d = spec.d as i32;
    let weight = |l: f64| ((l + r) / r).powi(d) - 1.0;
    let n = radii.len() as f64;
    let mut sum = 0.0;
    // With R in [radii[k], radii[k-1]) exactly the k largest radii exceed R.
    for &l in &radii {
        let next = sum + weight(l);
        if spec.nu * next / n >= MARGIN_TOLERANCE {
            return Ok(l);
        }
        sum = next;
    }
    Ok(0.0)
}
