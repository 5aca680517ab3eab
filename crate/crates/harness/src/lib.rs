//! Experiment harness for average-reward TD policy evaluation.
//!
//! Builds problems from synthetic environments or interchange files, runs
//! seeded learners over them and records error trajectories as CSV.

pub mod cli;
pub mod config;
pub mod envs;
pub mod error;
pub mod experiment;
pub mod features;
pub mod mdpfile;

pub use config::{Algorithm, AlgorithmSpec, EnvironmentSpec, ExperimentConfig, FeatureSpec, InitSpec, Sampling};
pub use error::{HarnessError, Result};
pub use experiment::{build_problem, run_experiment, Problem, RunRecord};
pub use mdpfile::MdpFile;
