//! One-to-one probabilistic record linkage.
//!
//! The pipeline compares two record files into ordinal agreement patterns,
//! fits m/u mixture parameters jointly with a one-to-one link set by
//! penalized likelihood, thresholds the fitted weights into post-hoc blocks,
//! and samples the link structure within those blocks by restricted MCMC.

pub mod assignment;
pub mod bench;
pub mod blocking;
pub mod comparison;
pub mod dsu;
pub mod error;
pub mod estimators;
pub mod io;
pub mod matching;
pub mod mcmc;
pub mod mixture;
pub mod records;
pub mod seed;
pub mod synth;

pub use error::{Error, Result};
