//! Experiment configuration files.
//!
//! ```toml
//! seed = 42
//!
//! [model]
//! kind = "temporal"
//! nu = 1.0
//! mu = 0.5
//! kernel = { type = "exponential", beta = 1.0 }
//!
//! [experiment]
//! horizon = 100.0
//!
//! [output]
//! dir = "out"
//! ```
//!
//! Unknown keys are rejected everywhere. Every model is re-validated by the
//! library constructors when it is built.

use std::path::{Path, PathBuf};

use clusterld::distributions::ClusterSizeLaw;
use clusterld::simulate::{TemporalKernel, TemporalSpec};
use clusterld::spatial::{SpatialKernel, SpatialSpec};
use clusterld::verify::{Margin, ModelSpec, Tail};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub seed: u64,
    pub model: ModelConfig,
    #[serde(default)]
    pub experiment: ExperimentConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[default]
    Temporal,
    Spatial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default)]
    pub kind: ModelKind,
    pub nu: f64,
    /// Branching mean of a Hawkes model. Exclusive with `size_pmf`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    /// Cluster-size probabilities of sizes `1, 2, ...`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size_pmf: Option<Vec<f64>>,
    /// Dimension of spatial models.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    pub kernel: KernelConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub progeny_cap: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelConfig {
    Exponential {
        beta: f64,
    },
    Uniform {
        b: f64,
    },
    Table {
        tmax: f64,
        density: Vec<f64>,
    },
    Gaussian {
        sigma: f64,
    },
    UniformBall {
        rho: f64,
    },
    /// One-sided temporal kernel on the line, for spatial models with `dim = 1`.
    HalfLine {
        kernel: Box<KernelConfig>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailConfig {
    Upper,
    Lower,
}

/// Parameters of all commands; each command reads the keys it needs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Temporal horizon `t` for `simulate`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    /// Observation radius `r` for spatial `simulate`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    /// Immigrant margin; chosen from pilot clusters when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub margin: Option<f64>,

    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_points: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_points: Option<usize>,

    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tail: Option<TailConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scales: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_reps: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radii: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Output directory; `--out` overrides it. Defaults to `.`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
}

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<clusterld::Error> for ConfigError {
    fn from(e: clusterld::Error) -> Self {
        ConfigError(e.to_string())
    }
}

pub type ConfigResult<T> = std::result::Result<T, ConfigError>;

fn missing(key: &str) -> ConfigError {
    ConfigError(format!("missing experiment key `{key}`"))
}

impl Config {
    pub fn parse(text: &str) -> ConfigResult<Self> {
        let config: Config = toml::from_str(text).map_err(|e| ConfigError(e.to_string()))?;
        config.model.build()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> ConfigResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configs always serialize")
    }
}

impl KernelConfig {
    fn temporal(&self) -> ConfigResult<TemporalKernel> {
        Ok(match self {
            KernelConfig::Exponential { beta } => TemporalKernel::exponential(*beta)?,
            KernelConfig::Uniform { b } => TemporalKernel::uniform(*b)?,
            KernelConfig::Table { tmax, density } => TemporalKernel::table(*tmax, density.clone())?,
            other => return Err(ConfigError(format!("kernel {other:?} is not a temporal kernel"))),
        })
    }

    fn spatial(&self) -> ConfigResult<SpatialKernel> {
        Ok(match self {
            KernelConfig::Gaussian { sigma } => SpatialKernel::gaussian(*sigma)?,
            KernelConfig::UniformBall { rho } => SpatialKernel::uniform_ball(*rho)?,
            KernelConfig::HalfLine { kernel } => SpatialKernel::HalfLine(kernel.temporal()?),
            other => return Err(ConfigError(format!("kernel {other:?} is not a spatial kernel"))),
        })
    }
}

impl ModelConfig {
    pub fn size_law(&self) -> ConfigResult<ClusterSizeLaw> {
        match (self.mu, &self.size_pmf) {
            (Some(mu), None) => Ok(ClusterSizeLaw::borel(mu)?),
            (None, Some(p)) => Ok(ClusterSizeLaw::table(p.clone())?),
            _ => Err(ConfigError("the model needs exactly one of `mu` and `size_pmf`".into())),
        }
    }

    pub fn build(&self) -> ConfigResult<ModelSpec> {
        if self.progeny_cap == Some(0) {
            return Err(ConfigError("progeny_cap must be positive".into()));
        }
        let law = self.size_law()?;
        let spec = match self.kind {
            ModelKind::Temporal => {
                if self.dim.is_some() {
                    return Err(ConfigError("`dim` only applies to spatial models".into()));
                }
                let mut spec = TemporalSpec::new(self.nu, law, self.kernel.temporal()?)?;
                if let Some(cap) = self.progeny_cap {
                    spec = spec.with_progeny_cap(cap);
                }
                ModelSpec::Temporal(spec)
            }
            ModelKind::Spatial => {
                let d = self
                    .dim
                    .ok_or_else(|| ConfigError("spatial models need `dim`".into()))?;
                let mut spec = SpatialSpec::new(d, self.nu, law, self.kernel.spatial()?)?;
                if let Some(cap) = self.progeny_cap {
                    spec = spec.with_progeny_cap(cap);
                }
                ModelSpec::Spatial(spec)
            }
        };
        Ok(spec)
    }
}

impl ExperimentConfig {
    pub fn margin(&self) -> Margin {
        self.margin.map_or(Margin::Auto, Margin::Fixed)
    }

    pub fn tail(&self) -> Tail {
        match self.tail {
            Some(TailConfig::Lower) => Tail::Lower,
            _ => Tail::Upper,
        }
    }

    pub fn require<T: Clone>(value: &Option<T>, key: &str) -> ConfigResult<T> {
        value.clone().ok_or_else(|| missing(key))
    }
}
