use thiserror::Error;

/// Errors raised while validating models or running simulations.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("branching mean must lie in (0, 1), got {0}")]
    BranchingMean(f64),

    #[error("{name} must be positive and finite, got {value}")]
    NonPositive { name: &'static str, value: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid cluster-size table: {0}")]
    InvalidPmf(String),

    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    /// A single cluster grew past the configured cap. Usually means the
    /// branching mean is too close to 1.
    #[error("cluster exceeded the cap of {cap} points")]
    ClusterCap { cap: u64 },

    #[error("recursion truncated at n = {nmax} leaves tail mass {tail:e}")]
    TailMass { nmax: usize, tail: f64 },

    #[error("root finder failed: {0}")]
    RootFinding(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn positive(name: &'static str, value: f64) -> Result<f64> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonPositive { name, value })
    }
}
