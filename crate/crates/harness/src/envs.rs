//! Synthetic environments, each reduced to the chain induced by its policy.

use avgtd_core::PolicyMarkovChain;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;

use crate::config::EnvironmentSpec;
use crate::error::{config, Result};
use crate::mdpfile::MdpFile;

/// Builds the chain for `spec`, then applies the ergodicity patch when
/// `epsilon` is set.
pub fn generate_environment(spec: &EnvironmentSpec, epsilon: Option<f64>) -> Result<PolicyMarkovChain> {
    let chain = match spec {
        EnvironmentSpec::RandomWalk { n } => random_walk(*n)?,
        EnvironmentSpec::Gridworld { width, height } => gridworld(*width, *height)?,
        EnvironmentSpec::RandomMdp { n, sparsity, seed } => random_mdp(*n, *sparsity, *seed)?,
        EnvironmentSpec::File { path } => MdpFile::load(path)?.to_chain()?,
    };
    match epsilon {
        Some(eps) => Ok(chain.make_ergodic(eps)?),
        None => Ok(chain),
    }
}

/// One-line description stored with the results.
pub fn describe(spec: &EnvironmentSpec) -> String {
    match spec {
        EnvironmentSpec::RandomWalk { n } => {
            format!(
                "random walk on {} states, reflecting ends, reward 1 at state {}",
                n,
                n.saturating_sub(1)
            )
        }
        EnvironmentSpec::Gridworld { width, height } => format!(
            "{}x{} grid, uniform random moves, walls keep the agent in place, reward 1 at ({}, {})",
            width,
            height,
            width.saturating_sub(1),
            height.saturating_sub(1)
        ),
        EnvironmentSpec::RandomMdp { n, sparsity, seed } => format!(
            "random chain on {} states, Dirichlet(1) rows, sparsity {}, rewards U[0,1], seed {}",
            n, sparsity, seed
        ),
        EnvironmentSpec::File { path } => format!("chain loaded from {}", path.display()),
    }
}

/// Left or right with probability 1/2; a move off the end stays put.
pub fn random_walk(n: usize) -> Result<PolicyMarkovChain> {
    if n < 2 {
        return config("random_walk needs n >= 2");
    }
    let mut p = DMatrix::zeros(n, n);
    for i in 0..n {
        p[(i, i.saturating_sub(1))] += 0.5;
        p[(i, (i + 1).min(n - 1))] += 0.5;
    }
    let mut r = DVector::zeros(n);
    r[n - 1] = 1.0;
    Ok(PolicyMarkovChain::new(p, r)?)
}

/// State `y * width + x`. Each of the four moves has probability 1/4.
pub fn gridworld(width: usize, height: usize) -> Result<PolicyMarkovChain> {
    if width == 0 || height == 0 || width * height < 2 {
        return config("gridworld needs at least two cells");
    }
    let n = width * height;
    let mut p = DMatrix::zeros(n, n);
    for y in 0..height {
        for x in 0..width {
            let s = y * width + x;
            let moves = [
                (x.saturating_sub(1), y),
                ((x + 1).min(width - 1), y),
                (x, y.saturating_sub(1)),
                (x, (y + 1).min(height - 1)),
            ];
            for (nx, ny) in moves {
                p[(s, ny * width + nx)] += 0.25;
            }
        }
    }
    let mut r = DVector::zeros(n);
    r[n - 1] = 1.0;
    Ok(PolicyMarkovChain::new(p, r)?)
}

/// Each entry is kept with probability `1 - sparsity` (at least one per
/// row); kept entries get Dirichlet(1) weights.
pub fn random_mdp(n: usize, sparsity: f64, seed: u64) -> Result<PolicyMarkovChain> {
    if n < 2 {
        return config("random_mdp needs n >= 2");
    }
    if !(0.0..1.0).contains(&sparsity) {
        return config(format!("sparsity must lie in [0, 1), got {}", sparsity));
    }
    let mut rng = Xoshiro256StarStar::seed_from_u64(seed);
    let mut p = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut keep: Vec<bool> = (0..n).map(|_| rng.random::<f64>() >= sparsity).collect();
        if !keep.iter().any(|&k| k) {
            keep[rng.random_range(0..n)] = true;
        }
        let weights: Vec<f64> = keep
            .iter()
            .map(|&k| if k { -(1.0 - rng.random::<f64>()).ln() } else { 0.0 })
            .collect();
        let total: f64 = weights.iter().sum();
        for (j, w) in weights.iter().enumerate() {
            p[(i, j)] = w / total;
        }
        fix_row_sum(&mut p, i);
    }
    let r = DVector::from_fn(n, |_, _| rng.random::<f64>());
    Ok(PolicyMarkovChain::new(p, r)?)
}

/// Moves any rounding residue onto the largest entry.
fn fix_row_sum(p: &mut DMatrix<f64>, i: usize) {
    let n = p.ncols();
    let sum: f64 = p.row(i).sum();
    let jmax = (0..n).max_by(|&a, &b| p[(i, a)].total_cmp(&p[(i, b)])).unwrap_or(0);
    p[(i, jmax)] += 1.0 - sum;
}
