//! Average-reward temporal-difference policy evaluation.
//!
//! The crate is organised bottom-up:
//!
//! * [`mdp`]: Markov reward processes induced by a fixed policy, their
//!   stationary distribution, gain, relative value function and mixing.
//! * [`geometry`]: `D`-norm, Dirichlet seminorm, projections, condition
//!   numbers and the contraction factor of the centered Bellman operator.
//! * [`exact`]: the exact projected fixed point `theta*` and the mean update
//!   field, used as ground truth.
//! * [`td`]: the double-chain and single-chain learners, step-size schedules,
//!   the running reward average and a coupled baseline.
//! * [`sampling`]: reproducible Markov and i.i.d. trajectory generation.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod exact;
pub mod geometry;
pub mod mdp;
pub mod sampling;
pub mod td;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
pub use exact::{projected_bellman_residual, solve_theta_star, EvalProblem};
pub use geometry::{FeatureMap, ProjectionRadii, SpectralReport};
pub use mdp::{PolicyMarkovChain, StationaryAnalysis, ValidationReport};
pub use sampling::{SamplingMode, TrajectorySampler};
pub use td::{CoupledBaseline, DoubleChainState, RewardEstimator, Sample, SingleChainState, StepSchedule};
