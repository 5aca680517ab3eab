//! Random instances shared by the unit tests.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::geometry::FeatureMap;
use crate::mdp::PolicyMarkovChain;

/// Dense chain with Dirichlet(1) rows and uniform rewards in [-1, 1].
pub fn random_chain<R: Rng>(rng: &mut R, n: usize) -> PolicyMarkovChain {
    let mut p = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        let mut total = 0.0;
        for j in 0..n {
            let x = -(1.0 - rng.random::<f64>()).ln();
            p[(i, j)] = x;
            total += x;
        }
        for j in 0..n {
            p[(i, j)] /= total;
        }
    }
    let r = DVector::from_fn(n, |_, _| 2.0 * rng.random::<f64>() - 1.0);
    PolicyMarkovChain::new(p, r).unwrap()
}

/// Uniform [-1, 1] entries, rows rescaled so the largest has unit norm.
pub fn random_features<R: Rng>(rng: &mut R, n: usize, d: usize) -> FeatureMap {
    loop {
        let mut phi = DMatrix::from_fn(n, d, |_, _| 2.0 * rng.random::<f64>() - 1.0);
        let max = (0..n).map(|i| phi.row(i).norm()).fold(0.0, f64::max);
        phi /= max;
        if let Ok(f) = FeatureMap::new(phi) {
            return f;
        }
    }
}
