//! Gibbs posteriors for PDE-constrained inverse problems.
//!
//! Adaptive sequential Monte Carlo over a tempering schedule in the loss
//! weight, with losses evaluated through a locally refined reduced-basis
//! surrogate whose residual error indicators drive refinement.

// `!(x > 0.0)` is used on purpose so NaN fails validation; mesh loops index
// several arrays at once.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod diagnostics;
pub mod error;
pub mod forward;
pub mod gibbs;
pub mod linalg;
pub mod mcmc;
pub mod prior;
pub mod rb;
pub mod rng;
pub mod smc;
pub mod weights;

pub use error::{Error, Result};
pub use forward::{assemble, ForwardModel, LossKind, ObservationSet, Preset};
pub use gibbs::ParticleSet;
pub use prior::{ParameterDomain, PriorSpec};
pub use rb::{ErrorThreshold, RbConfig, Surrogate};
pub use smc::{run_smc, SmcConfig, SmcRun};
