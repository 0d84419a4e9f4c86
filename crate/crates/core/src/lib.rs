//! Simulation and exact analysis of the reduced empirical process built on
//! non-overlapping k-spacings of a uniform sample.
//!
//! The crate is organised bottom-up:
//!
//! * [`gamma`]: CDF, survival, density, quantiles and tail bounds of the
//!   gamma distribution with integer shape `k` and unit scale.
//! * [`spacings`]: seeded simulation of k-spacings through partial sums of
//!   unit exponentials, and the transform to a uniform-type point set.
//! * [`transform`]: the time-change maps `psi` and `phi` together with their
//!   endpoint-reduced increment suprema.
//! * [`modulus`]: exact oscillation modulus, its normalisation and the
//!   one-sided fixed-width increment of a uniform-type empirical path.
//! * [`regimes`]: bandwidth schedules, side conditions and limit targets.
//! * [`harness`]: Monte Carlo experiment runner, summaries and persistence.

// `!(x < y)` is used on purpose so that NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod gamma;
pub mod harness;
pub mod modulus;
pub mod regimes;
pub mod rng;
pub mod spacings;
pub mod transform;

pub use error::{Error, Result};
pub use gamma::{GammaOrder, TailThreshold};
pub use harness::{ExperimentConfig, ReplicateRecord, SummaryRow};
pub use modulus::{EmpiricalPath, ModulusReport};
pub use regimes::{LimitTarget, RegimeSpec, Variant};
pub use spacings::{SpacingsSample, UniformizedSample};
pub use transform::{IncrementReport, PhiMap, PsiMap};
