//! MDP interchange file: the policy-induced chain as a JSON document.
//!
//! ```json
//! { "version": 1, "name": "two-cycle", "n": 2,
//!   "p": [0, 1, 1, 0], "r": [1, 0] }
//! ```
//!
//! `p` is row-major. `epsilon` records a patch that was already applied; it
//! is not re-applied on load.

use std::fs;
use std::path::Path;

use avgtd_core::PolicyMarkovChain;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{config, HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdpFile {
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub n: usize,
    pub p: Vec<f64>,
    pub r: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
}

impl MdpFile {
    pub fn from_chain(chain: &PolicyMarkovChain, name: Option<String>, epsilon: Option<f64>) -> Self {
        let n = chain.n();
        let p = chain.transition();
        Self {
            version: 1,
            name,
            n,
            p: (0..n).flat_map(|i| (0..n).map(move |j| p[(i, j)])).collect(),
            r: chain.rewards().iter().copied().collect(),
            epsilon,
        }
    }

    /// Builds the chain, checking shapes and stochasticity.
    pub fn to_chain(&self) -> Result<PolicyMarkovChain> {
        if self.version != 1 {
            return config(format!("unsupported MDP file version {}", self.version));
        }
        let n = self.n;
        if n == 0 || self.p.len() != n * n || self.r.len() != n {
            return config(format!(
                "MDP file shape mismatch: n = {}, |p| = {}, |r| = {}",
                n,
                self.p.len(),
                self.r.len()
            ));
        }
        let p = DMatrix::from_row_slice(n, n, &self.p);
        Ok(PolicyMarkovChain::new(p, DVector::from_column_slice(&self.r))?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| HarnessError::Parse {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| HarnessError::io(path, e))
    }
}
