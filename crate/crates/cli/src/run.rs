//! Command implementations. Each writes `effective_config.toml` and its CSV
//! files to the output directory.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use clusterld::distributions::ClusterSizeLaw;
use clusterld::output::{fmt_opt, fmt_real, write_table};
use clusterld::ratefn::{hawkes_rate, ScalarRate};
use clusterld::rng::SeedSequence;
use clusterld::simulate::{default_margin, simulate_truncated};
use clusterld::spatial::{default_spatial_margin, omega_d, simulate_spatial};
use clusterld::verify::{
    panjer_pmf, plain_tail_compound, run_finite_dim, run_scalar_slope, run_void_experiment, tilted_tail_compound,
    upper_tail, write_estimates, write_void_rows, Estimate, Margin, ModelSpec, PathExperiment, SlopeExperiment,
    VoidExperiment, ESTIMATE_HEADER,
};

use crate::config::{Config, ConfigError, ExperimentConfig};

#[derive(Debug)]
pub enum CliError {
    Config(String),
    ClusterCap(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::ClusterCap(_) => 3,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration: {m}"),
            CliError::ClusterCap(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.0)
    }
}

impl From<clusterld::Error> for CliError {
    fn from(e: clusterld::Error) -> Self {
        use clusterld::Error::*;
        match e {
            ClusterCap { .. } => CliError::ClusterCap(e.to_string()),
            BranchingMean(_) | NonPositive { .. } | InvalidArgument(_) | InvalidPmf(_) | InvalidKernel(_) => {
                CliError::Config(e.to_string())
            }
            TailMass { .. } | RootFinding(_) => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn require<T: Clone>(value: &Option<T>, key: &str) -> CliResult<T> {
    Ok(ExperimentConfig::require(value, key)?)
}

/// Creates the output directory, echoes the effective configuration and
/// returns the directory.
fn prepare(config: &Config) -> CliResult<PathBuf> {
    let dir = config.output.dir.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("effective_config.toml"), config.to_toml())?;
    Ok(dir)
}

fn create(dir: &std::path::Path, name: &str) -> CliResult<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn finish(mut w: BufWriter<File>) -> CliResult {
    w.flush()?;
    Ok(())
}

const SIMULATE: u64 = clusterld::rng::tag("cli.simulate");
const PILOT: u64 = clusterld::rng::tag("cli.pilot");

pub fn simulate(config: &Config) -> CliResult {
    let model = config.model.build()?;
    let exp = &config.experiment;
    let dir = prepare(config)?;
    let root = SeedSequence::new(config.seed);
    let mut rng = root.derive(SIMULATE).stream(0);
    match model {
        ModelSpec::Temporal(spec) => {
            let horizon = require(&exp.horizon, "horizon")?;
            let margin = match exp.margin {
                Some(m) => m,
                None => default_margin(&spec, horizon, &root.derive(PILOT))?,
            };
            let real = simulate_truncated(&spec, horizon, margin, &mut rng)?;
            let mut w = create(&dir, "realization.csv")?;
            real.write_csv(&mut w)?;
            finish(w)?;
            let count = real.count_in_interval(0.0, horizon);
            let rate = count as f64 / horizon;
            let row = vec![
                fmt_real(horizon),
                fmt_real(margin),
                real.immigrant_times().len().to_string(),
                real.len().to_string(),
                count.to_string(),
                fmt_real(rate),
                fmt_real(spec.intensity()),
            ];
            let header = [
                "horizon",
                "margin",
                "immigrants",
                "events",
                "events_in_window",
                "rate",
                "expected_rate",
            ];
            let mut w = create(&dir, "summary.csv")?;
            write_table(&mut w, &header, &[row])?;
            finish(w)?;
            println!(
                "{count} events in (0, {horizon}]: rate {rate} against {}",
                spec.intensity()
            );
        }
        ModelSpec::Spatial(spec) => {
            let radius = require(&exp.radius, "radius")?;
            let margin = match exp.margin {
                Some(m) => m,
                None => default_spatial_margin(&spec, radius, &root.derive(PILOT))?,
            };
            let real = simulate_spatial(&spec, radius, margin, &mut rng)?;
            let mut w = create(&dir, "realization.csv")?;
            real.write_csv(&mut w)?;
            finish(w)?;
            let count = real.count_in_ball(radius);
            let rate = count as f64 / omega_d(spec.dim(), radius);
            let row = vec![
                fmt_real(radius),
                fmt_real(margin),
                real.clusters().len().to_string(),
                real.len().to_string(),
                count.to_string(),
                fmt_real(rate),
                fmt_real(spec.intensity()),
            ];
            let header = [
                "radius",
                "margin",
                "immigrants",
                "events",
                "events_in_ball",
                "rate",
                "expected_rate",
            ];
            let mut w = create(&dir, "summary.csv")?;
            write_table(&mut w, &header, &[row])?;
            finish(w)?;
            println!(
                "{count} events in b(0, {radius}): rate {rate} against {}",
                spec.intensity()
            );
        }
    }
    Ok(())
}

fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

pub fn ratefn(config: &Config) -> CliResult {
    let model = config.model.build()?;
    let rate = model.rate();
    let exp = &config.experiment;
    let x_min = exp.x_min.unwrap_or(0.0);
    let x_max = exp.x_max.unwrap_or(3.0 * rate.mean());
    let n = exp.x_points.unwrap_or(101);
    if n == 0 || !(x_min <= x_max) {
        return Err(CliError::Config(
            "the x grid needs x_points >= 1 and x_min <= x_max".into(),
        ));
    }
    let dir = prepare(config)?;
    let mu = match rate.law() {
        ClusterSizeLaw::Borel(b) => Some(b.mu()),
        ClusterSizeLaw::Table(_) => None,
    };
    let rows: Vec<Vec<String>> = grid(x_min, x_max, n)
        .into_iter()
        .map(|x| {
            let tilt = if x > 0.0 {
                rate.tilt(x).ok().map(|t| t.theta())
            } else {
                None
            };
            let closed = mu.map(|mu| hawkes_rate(rate.nu(), mu, x).expect("validated model"));
            vec![fmt_real(x), fmt_real(rate.legendre(x)), fmt_opt(tilt), fmt_opt(closed)]
        })
        .collect();
    let mut w = create(&dir, "ratefn.csv")?;
    write_table(&mut w, &["x", "legendre", "tilt", "closed_form"], &rows)?;
    finish(w)?;

    if let Some(m) = exp.theta_points {
        let sup = rate.law().domain_sup().theta0;
        let lo = exp.theta_min.unwrap_or(-2.0);
        let hi = exp.theta_max.unwrap_or(if sup.is_finite() { sup } else { 1.0 });
        if m == 0 || !(lo <= hi) {
            return Err(CliError::Config(
                "the theta grid needs theta_points >= 1 and theta_min <= theta_max".into(),
            ));
        }
        let rows: Vec<Vec<String>> = grid(lo, hi, m)
            .into_iter()
            .map(|t| vec![fmt_real(t), fmt_real(rate.lambda(t))])
            .collect();
        let mut w = create(&dir, "lambda.csv")?;
        write_table(&mut w, &["theta", "lambda"], &rows)?;
        finish(w)?;
    }
    println!("rate function of mean {} written for {n} levels", rate.mean());
    Ok(())
}

fn report(rows: &[Estimate]) {
    for e in rows {
        match e.slope {
            Some(s) => println!("scale {}: p_hat {} slope {s} target {}", e.scale, e.p_hat, e.target),
            None => println!(
                "scale {}: no hits in {} replications, target {}",
                e.scale, e.n_reps, e.target
            ),
        }
    }
}

fn slope_experiment(config: &Config, model: ModelSpec) -> CliResult<SlopeExperiment> {
    let exp = &config.experiment;
    Ok(SlopeExperiment {
        model,
        tail: exp.tail(),
        level: require(&exp.level, "level")?,
        scales: require(&exp.scales, "scales")?,
        n_reps: require(&exp.n_reps, "n_reps")?,
        margin: exp.margin(),
        seed: config.seed,
    })
}

fn write_slope(config: &Config, model: ModelSpec, name: &str) -> CliResult {
    let experiment = slope_experiment(config, model)?;
    let dir = prepare(config)?;
    let rows = run_scalar_slope(&experiment)?;
    let mut w = create(&dir, name)?;
    write_estimates(&mut w, &rows)?;
    finish(w)?;
    report(&rows);
    Ok(())
}

pub fn verify_scalar(config: &Config) -> CliResult {
    match config.model.build()? {
        m @ ModelSpec::Temporal(_) => write_slope(config, m, "scalar.csv"),
        ModelSpec::Spatial(_) => Err(CliError::Config("`verify scalar` needs a temporal model".into())),
    }
}

pub fn verify_spatial(config: &Config) -> CliResult {
    match config.model.build()? {
        m @ ModelSpec::Spatial(_) => write_slope(config, m, "spatial.csv"),
        ModelSpec::Temporal(_) => Err(CliError::Config("`verify spatial` needs a spatial model".into())),
    }
}

pub fn verify_path(config: &Config) -> CliResult {
    let ModelSpec::Temporal(spec) = config.model.build()? else {
        return Err(CliError::Config("`verify path` needs a temporal model".into()));
    };
    let exp = &config.experiment;
    let experiment = PathExperiment {
        spec,
        times: require(&exp.times, "times")?,
        lower: require(&exp.lower, "lower")?,
        upper: require(&exp.upper, "upper")?,
        scales: require(&exp.scales, "scales")?,
        n_reps: require(&exp.n_reps, "n_reps")?,
        margin: exp.margin(),
        seed: config.seed,
    };
    let dir = prepare(config)?;
    let rows = run_finite_dim(&experiment)?;
    let mut w = create(&dir, "path.csv")?;
    write_estimates(&mut w, &rows)?;
    finish(w)?;
    report(&rows);
    Ok(())
}

pub fn verify_void(config: &Config) -> CliResult {
    let ModelSpec::Spatial(spec) = config.model.build()? else {
        return Err(CliError::Config("`verify void` needs a spatial model".into()));
    };
    let exp = &config.experiment;
    let experiment = VoidExperiment {
        spec,
        radii: require(&exp.radii, "radii")?,
        margin: exp.margin(),
        n_reps: require(&exp.n_reps, "n_reps")?,
        seed: config.seed,
    };
    for warning in experiment.warnings() {
        eprintln!("warning: {warning}");
    }
    let dir = prepare(config)?;
    let rows = run_void_experiment(&experiment)?;
    let mut w = create(&dir, "void.csv")?;
    write_void_rows(&mut w, &rows)?;
    finish(w)?;
    let estimates: Vec<Estimate> = rows.iter().map(|r| r.estimate).collect();
    report(&estimates);
    Ok(())
}

/// Panjer pmf of `C(t)`, growing `nmax` until the tail is negligible.
fn exact_pmf(rate: &ScalarRate, t: f64) -> CliResult<Vec<f64>> {
    let lambda = rate.nu() * t;
    let mut nmax = (10.0 * lambda * rate.law().mean() + 100.0) as usize;
    loop {
        match panjer_pmf(lambda, rate.law(), nmax) {
            Err(clusterld::Error::TailMass { .. }) if nmax < 1 << 26 => nmax *= 2,
            other => return Ok(other?),
        }
    }
}

/// Tilted and plain estimates of `P(C(t) >= a t)` next to the Panjer value.
pub fn verify_oracle(config: &Config) -> CliResult {
    let model = config.model.build()?;
    if matches!(model, ModelSpec::Spatial(_)) {
        return Err(CliError::Config("`verify oracle` needs a temporal model".into()));
    }
    let rate = model.rate();
    let exp = &config.experiment;
    let level = require(&exp.level, "level")?;
    let scales = require(&exp.scales, "scales")?;
    let n_reps = require(&exp.n_reps, "n_reps")?;
    if scales.iter().any(|t| !(*t > 0.0 && t.is_finite())) || scales.windows(2).any(|w| w[0] >= w[1]) {
        return Err(CliError::Config(
            "scales must be positive and strictly increasing".into(),
        ));
    }
    if let Margin::Fixed(_) = exp.margin() {
        eprintln!("warning: `margin` has no effect on `verify oracle`");
    }
    let dir = prepare(config)?;
    let root = SeedSequence::new(config.seed);
    let mut rows = Vec::new();
    for (j, &t) in scales.iter().enumerate() {
        let seeds = root.derive(j as u64);
        let pmf = exact_pmf(&rate, t)?;
        let exact = upper_tail(&pmf, (level * t).ceil() as usize);
        let tilted = tilted_tail_compound(&rate, t, level, n_reps, &seeds)?;
        let plain = plain_tail_compound(&rate, t, level, n_reps, &seeds)?;
        for (name, e) in [("tilted", tilted), ("plain", plain)] {
            let slope = e.slope.map_or_else(|| "none".to_string(), |s| s.to_string());
            println!("t {t} {name}: p_hat {} exact {exact} slope {slope}", e.p_hat);
            let mut row = vec![name.to_string()];
            row.extend(e.csv_row());
            row.push(fmt_real(exact));
            rows.push(row);
        }
    }
    let mut header = vec!["estimator"];
    header.extend(ESTIMATE_HEADER);
    header.push("exact");
    let mut w = create(&dir, "oracle.csv")?;
    write_table(&mut w, &header, &rows)?;
    finish(w)
}
