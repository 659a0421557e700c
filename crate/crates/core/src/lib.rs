//! Poisson cluster processes, their large deviation rate functions, and
//! Monte Carlo experiments that check one against the other.
//!
//! ```
//! use clusterld::ratefn::ScalarRate;
//! use clusterld::rng::SeedSequence;
//! use clusterld::verify::tilted_tail_compound;
//!
//! let rate = ScalarRate::hawkes(1.0, 0.5)?;
//! let p = tilted_tail_compound(&rate, 10.0, 3.0, 5_000, &SeedSequence::new(1))?;
//! assert!(p.p_hat > 0.0 && p.slope.unwrap() > rate.legendre(3.0));
//! # Ok::<(), clusterld::Error>(())
//! ```
//!
//! The guide in `book/` walks through the modules; its snippets run as
//! doc-tests of this crate.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod distributions;
pub mod error;
pub mod output;
pub mod ratefn;
pub mod rng;
pub mod roots;
pub mod simulate;
pub mod spatial;
pub mod stats;
pub mod verify;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/cluster-sizes.md")]
    mod cluster_sizes {}
    #[doc = include_str!("../../../book/src/rate-function.md")]
    mod rate_function {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/rare-events.md")]
    mod rare_events {}
    #[doc = include_str!("../../../book/src/spatial.md")]
    mod spatial {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
