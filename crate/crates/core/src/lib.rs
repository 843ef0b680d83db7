//! Few-shot event classification with knowledge-based Gaussian priors over
//! type prototypes, a learned gate that adapts the prior toward the support
//! set, Langevin posterior sampling and Monte Carlo prediction.

pub mod encoders;
pub mod episodes;
pub mod error;
pub mod harness;
pub mod numerics;
pub mod posterior;
pub mod prior;

pub use error::{Error, Result};
