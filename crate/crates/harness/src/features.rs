//! Feature generators.

use avgtd_core::geometry::numerical_rank;
use avgtd_core::{FeatureMap, StationaryAnalysis};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;

use crate::config::FeatureSpec;
use crate::error::{config, Result};

pub const MAX_RETRIES: usize = 100;

pub fn generate_features(analysis: &StationaryAnalysis, spec: &FeatureSpec) -> Result<FeatureMap> {
    let n = analysis.mu.len();
    match *spec {
        FeatureSpec::Tabular => Ok(FeatureMap::tabular(n)),
        FeatureSpec::Bernoulli {
            d,
            p,
            include_e_and_wstar,
            seed,
        } => {
            let mut rng = Xoshiro256StarStar::seed_from_u64(seed);
            bernoulli_features(analysis, d, p, include_e_and_wstar, &mut rng)
        }
    }
}

/// Draws 0/1 columns with success probability `p`. With `include_e_and_wstar`
/// the last two columns are `e` and `W*` and only `d - 2` are random.
/// Redraws until the rank is `d`, then divides every row by the largest row
/// norm.
pub fn bernoulli_features<R: Rng>(
    analysis: &StationaryAnalysis,
    d: usize,
    p: f64,
    include_e_and_wstar: bool,
    rng: &mut R,
) -> Result<FeatureMap> {
    let n = analysis.mu.len();
    let reserved = if include_e_and_wstar { 2 } else { 0 };
    if d < 1 || d < reserved + 1 {
        return config(format!("feature dimension {} too small", d));
    }
    if d > n {
        return config(format!("d = {} exceeds the number of states {}", d, n));
    }
    for _ in 0..MAX_RETRIES {
        let mut phi = DMatrix::zeros(n, d);
        for i in 0..n {
            for j in 0..d - reserved {
                if rng.random::<f64>() < p {
                    phi[(i, j)] = 1.0;
                }
            }
        }
        if include_e_and_wstar {
            phi.column_mut(d - 2).fill(1.0);
            phi.set_column(d - 1, &analysis.w_star);
        }
        if numerical_rank(&phi) < d {
            continue;
        }
        let scale = phi.row_iter().map(|r| r.norm()).fold(0.0, f64::max);
        phi /= scale;
        return Ok(FeatureMap::new(phi)?);
    }
    Err(avgtd_core::Error::Structural(format!("no rank-{} feature matrix in {} draws", d, MAX_RETRIES)).into())
}
