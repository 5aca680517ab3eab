//! Seeded trajectory generation.
//!
//! Streams come from xoshiro256** seeded through SplitMix64, and uniforms are
//! the top 53 bits of each output scaled by `2^-53`. Categorical draws use the
//! inverse CDF with right-closed intervals: with `u` in `(0, 1]`, state `k` is
//! chosen when `c_{k-1} < u <= c_k`. Together these make trajectories
//! reproducible on any platform from the seed alone.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;
use serde::{Deserialize, Serialize};

use crate::error::{param, structural, Result};
use crate::mdp::PolicyMarkovChain;
use crate::td::Sample;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output function; a bijection on `u64`.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of stream `chain_id` (0 or 1) of run `run_index`.
///
/// For a fixed `seed` the map `(run_index, chain_id) -> stream seed` is
/// injective while `run_index < 2^63`.
pub fn derive_stream_seed(seed: u64, run_index: u64, chain_id: u64) -> u64 {
    let slot = run_index.wrapping_mul(2).wrapping_add(chain_id & 1);
    mix64(mix64(seed).wrapping_add(slot.wrapping_mul(GOLDEN_GAMMA)))
}

/// Seeds for the primary and the second chain of one run.
pub fn seed_split(seed: u64, run_index: u64) -> (u64, u64) {
    (
        derive_stream_seed(seed, run_index, 0),
        derive_stream_seed(seed, run_index, 1),
    )
}

/// Uniform draw in `(0, 1]`.
#[inline]
fn uniform_open0<R: Rng>(rng: &mut R) -> f64 {
    1.0 - rng.random::<f64>()
}

/// Cumulative distribution with the convention described in the module docs.
#[derive(Debug, Clone, PartialEq)]
pub struct Categorical {
    cdf: Vec<f64>,
}

impl Categorical {
    pub fn new(probs: &[f64]) -> Result<Self> {
        if probs.is_empty() {
            return param("empty distribution");
        }
        let mut cdf = Vec::with_capacity(probs.len());
        let mut acc = 0.0;
        for &p in probs {
            if !(p >= 0.0) {
                return structural(format!("negative or NaN probability {}", p));
            }
            acc += p;
            cdf.push(acc);
        }
        if (acc - 1.0).abs() > 1e-9 {
            return structural(format!("probabilities sum to {}, not 1", acc));
        }
        // pin the tail to exactly one from the last state with positive mass
        let last = probs.iter().rposition(|&p| p > 0.0).unwrap();
        for c in &mut cdf[last..] {
            *c = 1.0;
        }
        Ok(Self { cdf })
    }

    /// Index for a uniform `u` in `(0, 1]`.
    #[inline]
    pub fn index(&self, u: f64) -> usize {
        self.cdf.partition_point(|&c| c < u)
    }

    #[inline]
    pub fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        self.index(uniform_open0(rng))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    /// One Markov trajectory.
    MarkovSingle,
    /// Two independent Markov trajectories.
    MarkovDouble,
    /// `s ~ mu` afresh every call, `s' ~ P(.|s)`, and an independent `s_hat ~ mu`.
    Iid,
}

/// Produces the transitions consumed by the learners.
#[derive(Debug, Clone)]
pub struct TrajectorySampler {
    mode: SamplingMode,
    rows: Vec<Categorical>,
    stationary: Option<Categorical>,
    rng: Xoshiro256StarStar,
    rng_hat: Xoshiro256StarStar,
    state: usize,
    state_hat: usize,
}

impl TrajectorySampler {
    /// `start` is used for both chains in the Markov modes.
    pub fn new(
        mode: SamplingMode,
        chain: &PolicyMarkovChain,
        mu: &DVector<f64>,
        seed: u64,
        run_index: u64,
        start: usize,
    ) -> Result<Self> {
        let n = chain.n();
        if start >= n {
            return param(format!("start state {} out of range for {} states", start, n));
        }
        let p = chain.transition();
        let rows = (0..n)
            .map(|i| {
                let row: Vec<f64> = p.row(i).iter().copied().collect();
                Categorical::new(&row)
            })
            .collect::<Result<Vec<_>>>()?;
        let stationary = if mode == SamplingMode::Iid {
            if mu.len() != n {
                return param("mu length does not match the chain");
            }
            Some(Categorical::new(mu.as_slice())?)
        } else {
            None
        };
        let (s1, s2) = seed_split(seed, run_index);
        Ok(Self {
            mode,
            rows,
            stationary,
            rng: Xoshiro256StarStar::seed_from_u64(s1),
            rng_hat: Xoshiro256StarStar::seed_from_u64(s2),
            state: start,
            state_hat: start,
        })
    }

    pub fn mode(&self) -> SamplingMode {
        self.mode
    }

    /// Current state of the primary chain.
    pub fn state(&self) -> usize {
        self.state
    }

    pub fn next_transition(&mut self) -> Sample {
        match self.mode {
            SamplingMode::MarkovSingle => {
                let s = self.state;
                let s_next = self.rows[s].sample(&mut self.rng);
                self.state = s_next;
                Sample { s, s_next, s_hat: None }
            }
            SamplingMode::MarkovDouble => {
                let s = self.state;
                let s_next = self.rows[s].sample(&mut self.rng);
                self.state = s_next;
                let s_hat = self.state_hat;
                self.state_hat = self.rows[s_hat].sample(&mut self.rng_hat);
                Sample {
                    s,
                    s_next,
                    s_hat: Some(s_hat),
                }
            }
            SamplingMode::Iid => {
                let dist = self.stationary.as_ref().expect("iid sampler has mu");
                let s = dist.sample(&mut self.rng);
                let s_next = self.rows[s].sample(&mut self.rng);
                let s_hat = dist.sample(&mut self.rng_hat);
                self.state = s_next;
                Sample {
                    s,
                    s_next,
                    s_hat: Some(s_hat),
                }
            }
        }
    }
}
