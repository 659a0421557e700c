//! Exact simulation of temporal Poisson cluster and Hawkes processes.
//!
//! Immigrants arrive as a homogeneous Poisson process of intensity `nu`.
//! Each immigrant roots an independent cluster. In the Hawkes case the
//! cluster is a branching cascade: every point at time `y` has
//! Poisson(`mu`) children at `y + V`, with `V` drawn from the normalized
//! offspring kernel. For a cluster-size table the immigrant instead gets
//! `S - 1` children displaced independently from it.
//!
//! A [`TemporalRealization`] keeps the immigrants of `[-T, t + T]` and every
//! point of their clusters, including points outside `(0, t]`, so counts on
//! any interval are exact for that truncated process.

use std::io::{self, Write};

use rand::Rng;
use rand_distr::{Distribution, Exp, Poisson};

use crate::distributions::{ClusterSizeLaw, DEFAULT_PROGENY_CAP};
use crate::error::{positive, Error, Result};
use crate::output::fmt_real;
use crate::rng::SeedSequence;

/// Normalized offspring displacement density on `(0, inf)`.
#[derive(Debug, Clone, PartialEq)]
pub enum TemporalKernel {
    /// Density `beta exp(-beta t)`.
    Exponential { beta: f64 },
    /// Uniform on `(0, b)`.
    Uniform { b: f64 },
    /// Piecewise-constant density on equal-width cells covering `[0, tmax]`.
    Table { tmax: f64, density: Vec<f64> },
}

impl TemporalKernel {
    pub fn exponential(beta: f64) -> Result<Self> {
        let k = Self::Exponential { beta };
        k.validate()?;
        Ok(k)
    }

    pub fn uniform(b: f64) -> Result<Self> {
        let k = Self::Uniform { b };
        k.validate()?;
        Ok(k)
    }

    pub fn table(tmax: f64, density: Vec<f64>) -> Result<Self> {
        let k = Self::Table { tmax, density };
        k.validate()?;
        Ok(k)
    }

    /// Checks positivity of the parameters, unit mass within `1e-9` and a
    /// finite mean displacement.
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Exponential { beta } => positive("beta", *beta).map(|_| ()),
            Self::Uniform { b } => positive("b", *b).map(|_| ()),
            Self::Table { tmax, density } => {
                positive("tmax", *tmax)?;
                if density.is_empty() {
                    return Err(Error::InvalidKernel("empty density table".into()));
                }
                if density.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
                    return Err(Error::InvalidKernel(
                        "density values must be finite and nonnegative".into(),
                    ));
                }
                let width = tmax / density.len() as f64;
                let mass: f64 = density.iter().sum::<f64>() * width;
                if (mass - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidKernel(format!("density integrates to {mass}, not 1")));
                }
                Ok(())
            }
        }
    }

    /// Mean displacement `E[V]`.
    pub fn mean(&self) -> f64 {
        match self {
            Self::Exponential { beta } => 1.0 / beta,
            Self::Uniform { b } => 0.5 * b,
            Self::Table { tmax, density } => {
                let width = tmax / density.len() as f64;
                density
                    .iter()
                    .enumerate()
                    .map(|(i, d)| d * width * (i as f64 + 0.5) * width)
                    .sum()
            }
        }
    }

    /// Draws a displacement. Never returns 0, so children strictly follow
    /// their parent.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Self::Exponential { beta } => {
                let v: f64 = Exp::new(*beta).expect("validated rate").sample(rng);
                if v > 0.0 {
                    v
                } else {
                    f64::MIN_POSITIVE
                }
            }
            Self::Uniform { b } => b * (1.0 - rng.random::<f64>()),
            Self::Table { tmax, density } => {
                let width = tmax / density.len() as f64;
                let u: f64 = rng.random::<f64>();
                let mut acc = 0.0;
                let mut cell = density.len() - 1;
                for (i, d) in density.iter().enumerate() {
                    acc += d * width;
                    if u < acc {
                        cell = i;
                        break;
                    }
                }
                let offset = 1.0 - rng.random::<f64>();
                (cell as f64 + offset) * width
            }
        }
    }
}

/// Model of a temporal Poisson cluster process.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalSpec {
    nu: f64,
    size_law: ClusterSizeLaw,
    kernel: TemporalKernel,
    progeny_cap: u64,
}

impl TemporalSpec {
    /// Hawkes process: Borel(`mu`) cluster sizes generated by branching.
    pub fn hawkes(nu: f64, mu: f64, kernel: TemporalKernel) -> Result<Self> {
        Self::new(nu, ClusterSizeLaw::borel(mu)?, kernel)
    }

    /// Cluster process with the given size law. A Borel law is simulated as
    /// a Hawkes cascade; a table law as an immigrant plus `S - 1` children.
    pub fn new(nu: f64, size_law: ClusterSizeLaw, kernel: TemporalKernel) -> Result<Self> {
        positive("nu", nu)?;
        kernel.validate()?;
        Ok(Self {
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

    pub fn nu(&self) -> f64 {
        self.nu
    }

    /// Branching mean for Hawkes models.
    pub fn mu(&self) -> Option<f64> {
        match &self.size_law {
            ClusterSizeLaw::Borel(b) => Some(b.mu()),
            ClusterSizeLaw::Table(_) => None,
        }
    }

    pub fn size_law(&self) -> &ClusterSizeLaw {
        &self.size_law
    }

    pub fn kernel(&self) -> &TemporalKernel {
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

/// One point of a cluster.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterEvent {
    pub time: f64,
    pub generation: u32,
    /// Index of the parent within the cluster's event list.
    pub parent: Option<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemporalCluster {
    pub center: f64,
    /// Sorted by time; the center comes first.
    pub events: Vec<ClusterEvent>,
    /// Largest distance of a point from the center.
    pub radius: f64,
}

impl TemporalCluster {
    pub fn size(&self) -> usize {
        self.events.len()
    }
}

/// Generates the cluster rooted at `center`, generation by generation.
pub fn sample_cluster<R: Rng + ?Sized>(spec: &TemporalSpec, center: f64, rng: &mut R) -> Result<TemporalCluster> {
    let mut events = Vec::new();
    grow_cluster(spec, center, rng, &mut events)?;
    sort_events(&mut events);
    let radius = events.iter().map(|e| (e.time - center).abs()).fold(0.0, f64::max);
    Ok(TemporalCluster { center, events, radius })
}

/// Fills `events` with the cluster of `center` in generation order.
fn grow_cluster<R: Rng + ?Sized>(
    spec: &TemporalSpec,
    center: f64,
    rng: &mut R,
    events: &mut Vec<ClusterEvent>,
) -> Result<()> {
    let cap = spec.progeny_cap;
    events.clear();
    events.push(ClusterEvent {
        time: center,
        generation: 0,
        parent: None,
    });
    match &spec.size_law {
        ClusterSizeLaw::Borel(b) => {
            let offspring = Poisson::new(b.mu()).expect("mu is positive");
            let mut next = 0;
            while next < events.len() {
                let parent = events[next];
                let children = offspring.sample(rng) as u64;
                if events.len() as u64 + children > cap {
                    return Err(Error::ClusterCap { cap });
                }
                for _ in 0..children {
                    events.push(ClusterEvent {
                        time: parent.time + spec.kernel.sample(rng),
                        generation: parent.generation + 1,
                        parent: Some(next as u32),
                    });
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
                events.push(ClusterEvent {
                    time: center + spec.kernel.sample(rng),
                    generation: 1,
                    parent: Some(0),
                });
            }
        }
    }
    Ok(())
}

/// Sorts by time, keeping generation order on ties, and remaps parents.
fn sort_events(events: &mut Vec<ClusterEvent>) {
    if events.len() < 2 {
        return;
    }
    let mut order: Vec<usize> = (0..events.len()).collect();
    order.sort_by(|&a, &b| events[a].time.total_cmp(&events[b].time).then(a.cmp(&b)));
    let mut position = vec![0u32; events.len()];
    for (new, &old) in order.iter().enumerate() {
        position[old] = new as u32;
    }
    let sorted = order
        .iter()
        .map(|&old| {
            let e = events[old];
            ClusterEvent {
                parent: e.parent.map(|p| position[p as usize]),
                ..e
            }
        })
        .collect();
    *events = sorted;
}

/// Immigrants restricted to `[-margin, horizon + margin]` and their clusters.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalRealization {
    horizon: f64,
    margin: f64,
    immigrant_times: Vec<f64>,
    clusters: Vec<TemporalCluster>,
    times: Vec<f64>,
    generations: Vec<u32>,
    cluster_ids: Vec<u32>,
}

/// Simulates the truncated process over `(0, horizon]` with immigrants on
/// `[-margin, horizon + margin]`.
pub fn simulate_truncated<R: Rng + ?Sized>(
    spec: &TemporalSpec,
    horizon: f64,
    margin: f64,
    rng: &mut R,
) -> Result<TemporalRealization> {
    positive("horizon", horizon)?;
    if !(margin >= 0.0 && margin.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "margin must be finite and nonnegative, got {margin}"
        )));
    }
    let immigrant_times = sample_immigrants(spec, horizon, margin, rng);
    let clusters = immigrant_times
        .iter()
        .map(|&c| sample_cluster(spec, c, rng))
        .collect::<Result<Vec<_>>>()?;

    let total: usize = clusters.iter().map(|c| c.size()).sum();
    let mut flat: Vec<(f64, u32, u32)> = Vec::with_capacity(total);
    for (id, cluster) in clusters.iter().enumerate() {
        flat.extend(cluster.events.iter().map(|e| (e.time, e.generation, id as u32)));
    }
    flat.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.2.cmp(&b.2)).then(a.1.cmp(&b.1)));
    let times = flat.iter().map(|e| e.0).collect();
    let generations = flat.iter().map(|e| e.1).collect();
    let cluster_ids = flat.iter().map(|e| e.2).collect();

    Ok(TemporalRealization {
        horizon,
        margin,
        immigrant_times,
        clusters,
        times,
        generations,
        cluster_ids,
    })
}

fn sample_immigrants<R: Rng + ?Sized>(spec: &TemporalSpec, horizon: f64, margin: f64, rng: &mut R) -> Vec<f64> {
    let gap = Exp::new(spec.nu).expect("nu is positive");
    let end = horizon + margin;
    let mut immigrant_times = Vec::new();
    let mut x = -margin + gap.sample(rng);
    while x <= end {
        immigrant_times.push(x);
        x += gap.sample(rng);
    }
    immigrant_times
}

/// The counts `N(0, b]` for each `b` in `bounds`, for the realization that
/// [`simulate_truncated`] would produce from the same `rng` state, without
/// storing it.
pub fn count_truncated<R: Rng + ?Sized>(
    spec: &TemporalSpec,
    horizon: f64,
    margin: f64,
    bounds: &[f64],
    rng: &mut R,
) -> Result<Vec<u64>> {
    positive("horizon", horizon)?;
    if !(margin >= 0.0 && margin.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "margin must be finite and nonnegative, got {margin}"
        )));
    }
    let immigrant_times = sample_immigrants(spec, horizon, margin, rng);
    let mut counts = vec![0u64; bounds.len()];
    let mut events = Vec::new();
    for &c in &immigrant_times {
        grow_cluster(spec, c, rng, &mut events)?;
        for e in &events {
            if e.time > 0.0 {
                for (n, &b) in counts.iter_mut().zip(bounds) {
                    *n += u64::from(e.time <= b);
                }
            }
        }
    }
    Ok(counts)
}

impl TemporalRealization {
    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn margin(&self) -> f64 {
        self.margin
    }

    pub fn immigrant_times(&self) -> &[f64] {
        &self.immigrant_times
    }

    pub fn clusters(&self) -> &[TemporalCluster] {
        &self.clusters
    }

    /// All event times in increasing order.
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn generations(&self) -> &[u32] {
        &self.generations
    }

    pub fn cluster_ids(&self) -> &[u32] {
        &self.cluster_ids
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Number of events in `(a, b]`; zero when `b <= a`.
    pub fn count_in_interval(&self, a: f64, b: f64) -> u64 {
        if b <= a {
            return 0;
        }
        let upto = |x: f64| self.times.partition_point(|&t| t <= x);
        (upto(b) - upto(a)) as u64
    }

    /// Scaled counting path `N(0, alpha s] / alpha` at the grid points.
    ///
    /// The grid must be sorted and inside `[0, 1]`, and `alpha` may not
    /// exceed the horizon.
    pub fn count_path(&self, alpha: f64, grid: &[f64]) -> Result<Vec<f64>> {
        positive("alpha", alpha)?;
        if alpha > self.horizon {
            return Err(Error::InvalidArgument(format!(
                "scale {alpha} exceeds the simulated horizon {}",
                self.horizon
            )));
        }
        if grid.iter().any(|s| !(0.0..=1.0).contains(s)) {
            return Err(Error::InvalidArgument("path grid must lie in [0, 1]".into()));
        }
        if grid.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidArgument("path grid must be sorted".into()));
        }
        Ok(grid
            .iter()
            .map(|&s| self.count_in_interval(0.0, alpha * s) as f64 / alpha)
            .collect())
    }

    /// Writes `cluster_id,generation,time` rows in time order.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "cluster_id,generation,time")?;
        for i in 0..self.times.len() {
            writeln!(
                w,
                "{},{},{}",
                self.cluster_ids[i],
                self.generations[i],
                fmt_real(self.times[i])
            )?;
        }
        Ok(())
    }
}

/// `C(t)`: total size of the clusters of the immigrants in `(0, t]`.
pub fn surrogate_compound<R: Rng + ?Sized>(spec: &TemporalSpec, t: f64, rng: &mut R) -> Result<u64> {
    positive("t", t)?;
    compound_poisson(spec.nu * t, &spec.size_law, spec.progeny_cap, rng)
}

/// Sum of a Poisson(`mean_count`) number of i.i.d. draws from `law`.
pub(crate) fn compound_poisson<R: Rng + ?Sized>(
    mean_count: f64,
    law: &ClusterSizeLaw,
    cap: u64,
    rng: &mut R,
) -> Result<u64> {
    let n = Poisson::new(mean_count).expect("positive mean").sample(rng) as u64;
    let mut total = 0;
    for _ in 0..n {
        total += law.sample(rng, cap)?;
    }
    Ok(total)
}

/// Number of pilot clusters used to pick default margins.
pub const PILOT_CLUSTERS: usize = 10_000;

/// Relative tolerance on the mass missed by truncating immigrants.
pub const MARGIN_TOLERANCE: f64 = 1e-4;

/// Default immigrant margin for a horizon `t`.
///
/// Picks the smallest `T` with `E[(L - T)^+] < 1e-4 t`, the expectation
/// taken over [`PILOT_CLUSTERS`] pilot cluster radii `L` drawn from
/// `seeds`.
pub fn default_margin(spec: &TemporalSpec, horizon: f64, seeds: &SeedSequence) -> Result<f64> {
    positive("horizon", horizon)?;
    let mut radii = (0..PILOT_CLUSTERS as u64)
        .map(|i| sample_cluster(spec, 0.0, &mut seeds.stream(i)).map(|c| c.radius))
        .collect::<Result<Vec<_>>>()?;
    radii.sort_by(|a, b| b.total_cmp(a));
    Ok(excess_quantile(&radii, MARGIN_TOLERANCE * horizon))
}

/// Smallest `T >= 0` with `mean((L_i - T)^+) <= tol`, for `radii` sorted in
/// decreasing order.
fn excess_quantile(radii: &[f64], tol: f64) -> f64 {
    let n = radii.len() as f64;
    let mut top_sum = 0.0;
    for (j, &r) in radii.iter().enumerate() {
        // On [radii[j], radii[j-1]] the j largest radii exceed T.
        if j > 0 {
            let t = (top_sum - n * tol) / j as f64;
            if t >= r {
                return t;
            }
        }
        top_sum += r;
    }
    let j = radii.len() as f64;
    ((top_sum - n * tol) / j).max(0.0)
}
