//! Experiment configuration, read from a JSON document.
//!
//! ```json
//! {
//!   "version": 1,
//!   "environment": { "kind": "random_walk", "n": 5 },
//!   "features": { "kind": "tabular" },
//!   "algorithms": [
//!     { "name": "double_chain",
//!       "schedule": { "kind": "decaying", "a": 150, "c0": 1000, "xi": 1 } }
//!   ],
//!   "steps": 150000,
//!   "seeds": [0, 1, 2]
//! }
//! ```

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use avgtd_core::StepSchedule;
use serde::{Deserialize, Serialize};

use crate::error::{config, HarnessError, Result};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvironmentSpec {
    /// Reflecting walk on a line, reward 1 at the right end.
    RandomWalk { n: usize },
    /// Uniform random policy on a grid, reward 1 at the far corner.
    Gridworld { width: usize, height: usize },
    /// Dirichlet(1) rows on a random support, rewards uniform in [0, 1].
    /// Each off-support entry is dropped with probability `sparsity`.
    RandomMdp {
        n: usize,
        #[serde(default)]
        sparsity: f64,
        #[serde(default)]
        seed: u64,
    },
    /// An MDP interchange file.
    File { path: PathBuf },
}

impl EnvironmentSpec {
    /// Number of states when it is known without building the chain.
    pub fn states(&self) -> Option<usize> {
        match *self {
            EnvironmentSpec::RandomWalk { n } | EnvironmentSpec::RandomMdp { n, .. } => Some(n),
            EnvironmentSpec::Gridworld { width, height } => Some(width * height),
            EnvironmentSpec::File { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FeatureSpec {
    #[default]
    Tabular,
    /// Random 0/1 columns, optionally followed by `e` and `W*`.
    Bernoulli {
        d: usize,
        #[serde(default = "default_bernoulli_p")]
        p: f64,
        #[serde(default = "default_true")]
        include_e_and_wstar: bool,
        #[serde(default)]
        seed: u64,
    },
}

fn default_bernoulli_p() -> f64 {
    0.5
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    DoubleChain,
    SingleChain,
    CoupledBaseline,
}

impl Algorithm {
    pub fn as_str(&self) -> &'static str {
        match self {
            Algorithm::DoubleChain => "double_chain",
            Algorithm::SingleChain => "single_chain",
            Algorithm::CoupledBaseline => "coupled_baseline",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmSpec {
    pub name: Algorithm,
    pub schedule: StepSchedule,
    /// Written to the `algorithm` column; defaults to the name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl AlgorithmSpec {
    pub fn label(&self) -> String {
        self.label.clone().unwrap_or_else(|| self.name.as_str().to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    #[default]
    Markov,
    Iid,
    /// Noiseless test mode: the double-chain learner follows the exact mean field.
    MeanField,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitSpec {
    #[default]
    Zero,
    ThetaStar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub environment: EnvironmentSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub features: FeatureSpec,
    pub algorithms: Vec<AlgorithmSpec>,
    /// Only read by `sweep`, which crosses it with the algorithm names.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub schedules: Vec<StepSchedule>,
    pub steps: u64,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub sampling: Sampling,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_log_points")]
    pub log_points: usize,
    #[serde(default)]
    pub start_state: usize,
    #[serde(default)]
    pub theta0: InitSpec,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_log_points() -> usize {
    200
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let cfg = Self::from_json(&text).map_err(|source| HarnessError::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks everything that can be checked before the chain is built.
    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return config(format!("unsupported config version {}", self.version));
        }
        if self.steps < 1 {
            return config("steps must be at least 1");
        }
        if self.seeds.is_empty() {
            return config("seeds must not be empty");
        }
        let unique: HashSet<_> = self.seeds.iter().collect();
        if unique.len() != self.seeds.len() {
            return config("seeds must be distinct");
        }
        if self.algorithms.is_empty() {
            return config("at least one algorithm is required");
        }
        let mut labels = HashSet::new();
        for a in &self.algorithms {
            a.schedule.validate()?;
            let label = a.label();
            if label.is_empty() || label.contains(['/', '\\', ',']) {
                return config(format!("bad algorithm label {:?}", label));
            }
            if !labels.insert(label.clone()) {
                return config(format!("duplicate algorithm label {:?}", label));
            }
            if self.sampling == Sampling::MeanField && a.name != Algorithm::DoubleChain {
                return config(format!(
                    "mean_field sampling only drives double_chain, not {}",
                    a.name.as_str()
                ));
            }
        }
        for s in &self.schedules {
            s.validate()?;
        }
        if self.log_points < 1 {
            return config("log_points must be at least 1");
        }
        if let Some(eps) = self.epsilon {
            if !(eps > 0.0 && eps < 1.0) {
                return config(format!("epsilon must lie in (0, 1), got {}", eps));
            }
        }
        match self.environment {
            EnvironmentSpec::RandomWalk { n } if n < 2 => return config("random_walk needs n >= 2"),
            EnvironmentSpec::Gridworld { width, height } if width == 0 || height == 0 || width * height < 2 => {
                return config("gridworld needs at least two cells")
            }
            EnvironmentSpec::RandomMdp { n, sparsity, .. } => {
                if n < 2 {
                    return config("random_mdp needs n >= 2");
                }
                if !(0.0..1.0).contains(&sparsity) {
                    return config(format!("sparsity must lie in [0, 1), got {}", sparsity));
                }
            }
            _ => {}
        }
        let n = self.environment.states();
        if let FeatureSpec::Bernoulli {
            d,
            p,
            include_e_and_wstar,
            ..
        } = self.features
        {
            if d < 1 {
                return config("feature dimension d must be at least 1");
            }
            if include_e_and_wstar && d < 3 {
                return config("d must be at least 3 when e and W* are included");
            }
            if !(p > 0.0 && p < 1.0) {
                return config(format!("bernoulli p must lie in (0, 1), got {}", p));
            }
            if let Some(n) = n {
                if d > n {
                    return config(format!("d = {} exceeds the number of states {}", d, n));
                }
            }
        }
        if let Some(n) = n {
            if self.start_state >= n {
                return config(format!(
                    "start_state {} out of range for {} states",
                    self.start_state, n
                ));
            }
        }
        Ok(())
    }

    /// The sweep expansion: every algorithm name crossed with every schedule.
    pub fn expand_sweep(&self) -> Result<ExperimentConfig> {
        if self.schedules.is_empty() {
            return config("sweep needs a nonempty `schedules` list");
        }
        let mut names: Vec<Algorithm> = Vec::new();
        for a in &self.algorithms {
            if !names.contains(&a.name) {
                names.push(a.name);
            }
        }
        let mut algorithms = Vec::new();
        for name in names {
            for s in &self.schedules {
                algorithms.push(AlgorithmSpec {
                    name,
                    schedule: *s,
                    label: Some(format!("{}-{}", name.as_str(), s.label())),
                });
            }
        }
        let mut out = self.clone();
        out.algorithms = algorithms;
        out.schedules.clear();
        out.validate()?;
        Ok(out)
    }
}
