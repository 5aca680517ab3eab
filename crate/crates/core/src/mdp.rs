//! Finite Markov chains induced by a fixed policy.
//!
//! A [`PolicyMarkovChain`] pairs a row-stochastic transition matrix with the
//! expected one-step reward of every state. The functions in this module
//! compute the exact stationary quantities that every other part of the
//! crate treats as ground truth: the stationary distribution, the average
//! reward, the centered relative value function and a geometric envelope for
//! the distance to stationarity.

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::{param, structural, Result};

/// Tolerance on row sums accepted by [`PolicyMarkovChain::new`].
pub const ROW_SUM_TOL: f64 = 1e-12;

/// Distances below this value are treated as "mixed to machine precision"
/// and end the mixing-curve sampling early.
const MIXING_FLOOR: f64 = 1e-12;

/// Only distances above this level enter the rate fit; below it roundoff in
/// the matrix powers dominates the relative error.
const FIT_FLOOR: f64 = 1e-8;

/// Transition matrix and expected rewards of a Markov reward process.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyMarkovChain {
    p: DMatrix<f64>,
    r: DVector<f64>,
}

impl PolicyMarkovChain {
    /// Builds a chain, rejecting non-square or non-stochastic matrices.
    pub fn new(p: DMatrix<f64>, r: DVector<f64>) -> Result<Self> {
        let n = p.nrows();
        if n == 0 {
            return param("transition matrix must have at least one state");
        }
        if p.ncols() != n {
            return param(format!("transition matrix is {}x{}, expected square", n, p.ncols()));
        }
        if r.len() != n {
            return param(format!("reward vector has length {}, expected {}", r.len(), n));
        }
        if r.iter().any(|x| !x.is_finite()) {
            return param("reward vector has non-finite entries");
        }
        let report = validate_matrix(&p);
        if !report.is_stochastic() {
            return param(format!("transition matrix is not row-stochastic: {}", report));
        }
        Ok(Self { p, r })
    }

    /// Builds a chain from row-major nested vectors.
    pub fn from_rows(rows: &[Vec<f64>], r: &[f64]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|row| row.len() != n) {
            return param("transition rows must all have length n");
        }
        let p = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
        Self::new(p, DVector::from_column_slice(r))
    }

    pub fn n(&self) -> usize {
        self.p.nrows()
    }

    pub fn transition(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn rewards(&self) -> &DVector<f64> {
        &self.r
    }

    /// Largest absolute expected reward.
    pub fn r_max(&self) -> f64 {
        self.r.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
    }

    /// Same dynamics with a different reward vector.
    pub fn with_rewards(&self, r: DVector<f64>) -> Result<Self> {
        Self::new(self.p.clone(), r)
    }

    pub fn validate(&self) -> ValidationReport {
        validate_matrix(&self.p)
    }

    /// Applies the ergodicity patch: in every row with `k > 0` zero entries,
    /// each zero receives `epsilon / k` and every nonzero entry is scaled by
    /// `1 - epsilon`. Rows without zeros are left untouched.
    pub fn make_ergodic(&self, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return param(format!("epsilon must lie in (0, 1), got {}", epsilon));
        }
        let n = self.n();
        let mut p = self.p.clone();
        for i in 0..n {
            let zeros = (0..n).filter(|&j| p[(i, j)] == 0.0).count();
            if zeros == 0 {
                continue;
            }
            let share = epsilon / zeros as f64;
            for j in 0..n {
                let v = p[(i, j)];
                p[(i, j)] = if v == 0.0 { share } else { v * (1.0 - epsilon) };
            }
        }
        Self::new(p, self.r.clone())
    }
}

/// Structural diagnostics for a candidate transition matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub n: usize,
    pub square: bool,
    /// Largest `|sum_j P[i, j] - 1|` over rows.
    pub max_row_sum_deviation: f64,
    /// Entries that are negative, above one or non-finite.
    pub out_of_range: Vec<(usize, usize)>,
    /// Strong connectivity of the positive-entry graph.
    pub irreducible: bool,
    /// Period of the chain; only defined when irreducible.
    pub period: Option<u64>,
}

impl ValidationReport {
    pub fn is_stochastic(&self) -> bool {
        self.square && self.out_of_range.is_empty() && self.max_row_sum_deviation <= ROW_SUM_TOL
    }

    pub fn aperiodic(&self) -> bool {
        self.period == Some(1)
    }

    /// Irreducible, aperiodic and stochastic.
    pub fn passes(&self) -> bool {
        self.is_stochastic() && self.irreducible && self.aperiodic()
    }

    pub fn failures(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !self.square {
            out.push("not square".to_string());
            return out;
        }
        if self.max_row_sum_deviation > ROW_SUM_TOL {
            out.push(format!(
                "row sums deviate from 1 by up to {:e}",
                self.max_row_sum_deviation
            ));
        }
        if !self.out_of_range.is_empty() {
            out.push(format!(
                "{} entries outside [0, 1], first at {:?}",
                self.out_of_range.len(),
                self.out_of_range[0]
            ));
        }
        if !self.irreducible {
            out.push("reducible".to_string());
        }
        if let Some(k) = self.period {
            if k != 1 {
                out.push(format!("periodic (period {})", k));
            }
        }
        out
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let failures = self.failures();
        if failures.is_empty() {
            write!(f, "pass: irreducible and aperiodic ({} states)", self.n)
        } else {
            write!(f, "fail: {}", failures.join("; "))
        }
    }
}

/// Checks stochasticity, irreducibility and aperiodicity of `p`.
///
/// Connectivity and period are decided on the graph of strictly positive
/// entries, so the answer carries no numerical tolerance.
pub fn validate_matrix(p: &DMatrix<f64>) -> ValidationReport {
    let n = p.nrows();
    if p.ncols() != n || n == 0 {
        return ValidationReport {
            n,
            square: false,
            max_row_sum_deviation: f64::INFINITY,
            out_of_range: Vec::new(),
            irreducible: false,
            period: None,
        };
    }
    let mut out_of_range = Vec::new();
    let mut max_dev = 0.0_f64;
    for i in 0..n {
        let mut sum = 0.0;
        for j in 0..n {
            let v = p[(i, j)];
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                out_of_range.push((i, j));
            }
            sum += v;
        }
        let dev = (sum - 1.0).abs();
        max_dev = if dev.is_nan() { f64::INFINITY } else { max_dev.max(dev) };
    }

    let adj: Vec<Vec<usize>> = (0..n).map(|i| (0..n).filter(|&j| p[(i, j)] > 0.0).collect()).collect();
    let radj: Vec<Vec<usize>> = (0..n).map(|j| (0..n).filter(|&i| p[(i, j)] > 0.0).collect()).collect();

    let forward = bfs_levels(&adj, 0);
    let backward = bfs_levels(&radj, 0);
    let irreducible = forward.iter().all(Option::is_some) && backward.iter().all(Option::is_some);

    let period = if irreducible {
        // gcd over edges of level(u) + 1 - level(v)
        let mut g = 0_u64;
        for (u, targets) in adj.iter().enumerate() {
            let lu = forward[u].unwrap() as i64;
            for &v in targets {
                let lv = forward[v].unwrap() as i64;
                g = gcd(g, (lu + 1 - lv).unsigned_abs());
            }
        }
        Some(g)
    } else {
        None
    };

    ValidationReport {
        n,
        square: true,
        max_row_sum_deviation: max_dev,
        out_of_range,
        irreducible,
        period,
    }
}

fn bfs_levels(adj: &[Vec<usize>], root: usize) -> Vec<Option<usize>> {
    let mut level = vec![None; adj.len()];
    let mut queue = std::collections::VecDeque::new();
    level[root] = Some(0);
    queue.push_back(root);
    while let Some(u) = queue.pop_front() {
        let next = level[u].unwrap() + 1;
        for &v in &adj[u] {
            if level[v].is_none() {
                level[v] = Some(next);
                queue.push_back(v);
            }
        }
    }
    level
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

/// Stationary distribution of an irreducible chain.
///
/// Solves `(I - P^T) mu = 0` with the last equation replaced by the
/// normalization `e^T mu = 1`.
pub fn stationary_distribution(chain: &PolicyMarkovChain) -> Result<DVector<f64>> {
    let n = chain.n();
    let report = chain.validate();
    if !report.irreducible {
        return structural("stationary distribution is not unique: chain is reducible");
    }
    let p = chain.transition();
    let mut a = DMatrix::<f64>::identity(n, n) - p.transpose();
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut b = DVector::<f64>::zeros(n);
    b[n - 1] = 1.0;
    let lu = a.clone().lu();
    let mut mu = match lu.solve(&b) {
        Some(x) => x,
        None => return structural("singular stationary system"),
    };
    // one step of iterative refinement
    let resid = &b - &a * &mu;
    if let Some(corr) = lu.solve(&resid) {
        mu += corr;
    }
    if mu.iter().any(|x| !x.is_finite() || *x <= 0.0) {
        return structural("stationary solve produced a non-positive entry");
    }
    let total = mu.sum();
    mu /= total;
    Ok(mu)
}

/// Average reward `g = mu^T R` and the relative value function `W*`.
///
/// `W*` is the unique solution of `(I - P + e mu^T) w = R - g e`, which is
/// the solution of the Poisson equation `w + g e = P w + R` with `mu^T w = 0`.
pub fn relative_value_function(chain: &PolicyMarkovChain, mu: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
    let n = chain.n();
    if mu.len() != n {
        return param(format!("mu has length {}, expected {}", mu.len(), n));
    }
    let r = chain.rewards();
    let g = mu.dot(r);
    let ones = DVector::<f64>::from_element(n, 1.0);
    let m = DMatrix::<f64>::identity(n, n) - chain.transition() + &ones * mu.transpose();
    let rhs = r - &ones * g;
    let lu = m.clone().lu();
    let mut w = match lu.solve(&rhs) {
        Some(w) => w,
        None => return structural("Poisson system is singular: chain is not ergodic"),
    };
    let resid = &rhs - &m * &w;
    if let Some(corr) = lu.solve(&resid) {
        w += corr;
    }
    if w.iter().any(|x| !x.is_finite()) {
        return structural("Poisson solve produced non-finite values");
    }
    let shift = mu.dot(&w);
    w.add_scalar_mut(-shift);
    Ok((g, w))
}

/// Worst-case L1 distance to stationarity `d(tau)` and a geometric
/// envelope `d(tau) <= C * beta^tau` over the sampled range.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingFit {
    pub c: f64,
    pub beta: f64,
    /// `d(0), d(1), ...` up to the horizon, or until the distance falls
    /// below machine-precision level.
    pub distances: Vec<f64>,
}

impl MixingFit {
    /// First `tau >= 1` with `d(tau) <= eps`, extrapolated with the envelope
    /// past the sampled range.
    pub fn tau_mix(&self, eps: f64) -> u64 {
        assert!(eps > 0.0, "tau_mix needs a positive accuracy");
        if let Some(t) = self.distances.iter().skip(1).position(|&d| d <= eps) {
            return t as u64 + 1;
        }
        let last = self.distances.len().max(2) as u64 - 1;
        if self.beta <= 0.0 || *self.distances.last().unwrap_or(&0.0) <= MIXING_FLOOR {
            return last.max(1);
        }
        let t = ((eps / self.c).ln() / self.beta.ln()).ceil();
        (t.max(last as f64 + 1.0)) as u64
    }

    pub fn envelope(&self, tau: usize) -> f64 {
        if tau == 0 {
            self.c
        } else {
            self.c * self.beta.powi(tau as i32)
        }
    }
}

/// `max_s || p_tau(.|s) - mu ||_1` for `tau = 0..=horizon`.
pub fn mixing_distances(chain: &PolicyMarkovChain, mu: &DVector<f64>, horizon: usize) -> Vec<f64> {
    let n = chain.n();
    let p = chain.transition();
    let dist = |m: &DMatrix<f64>| {
        (0..n)
            .map(|s| (0..n).map(|j| (m[(s, j)] - mu[j]).abs()).sum::<f64>())
            .fold(0.0_f64, f64::max)
    };
    let mut m = DMatrix::<f64>::identity(n, n);
    let mut out = vec![dist(&m)];
    for _ in 0..horizon {
        m = &m * p;
        let d = dist(&m);
        out.push(d);
        if d <= MIXING_FLOOR {
            break;
        }
    }
    out
}

/// Fits the geometric mixing envelope.
///
/// The rate is the least-squares slope of `ln d(tau)` over the tail half of
/// the sampled curve; the constant is then the smallest `C >= 1` that makes
/// the envelope hold at every sampled point, so it binds at one of them.
pub fn mixing_fit(chain: &PolicyMarkovChain, mu: &DVector<f64>, horizon: usize) -> Result<MixingFit> {
    if horizon < 1 {
        return param("mixing horizon must be at least 1");
    }
    if mu.len() != chain.n() {
        return param("mu length does not match the chain");
    }
    let distances = mixing_distances(chain, mu, horizon);
    let pts: Vec<(f64, f64)> = distances
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(_, &d)| d > MIXING_FLOOR)
        .map(|(t, &d)| (t as f64, d.ln()))
        .collect();
    let fit_pts: Vec<(f64, f64)> = pts.iter().copied().filter(|p| p.1 > FIT_FLOOR.ln()).collect();

    let d0 = distances[0];
    let beta = if pts.is_empty() {
        0.0
    } else {
        let src = if fit_pts.is_empty() { &pts } else { &fit_pts };
        let tail = &src[src.len() / 2..];
        let ls = if tail.len() >= 2 {
            let k = tail.len() as f64;
            let mx = tail.iter().map(|p| p.0).sum::<f64>() / k;
            let my = tail.iter().map(|p| p.1).sum::<f64>() / k;
            let sxy: f64 = tail.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
            let sxx: f64 = tail.iter().map(|p| (p.0 - mx).powi(2)).sum();
            sxy / sxx
        } else {
            f64::INFINITY
        };
        let rate = if ls < 0.0 {
            ls.exp()
        } else {
            let (t, ld) = *pts.last().unwrap();
            ((ld - d0.ln()) / t).exp()
        };
        if !(rate < 1.0) {
            return structural("distance to stationarity does not decay within the horizon");
        }
        rate
    };

    let mut log_c = if d0 > 0.0 { d0.ln() } else { 0.0 };
    if beta > 0.0 {
        let lb = beta.ln();
        for &(t, ld) in &pts {
            log_c = log_c.max(ld - t * lb);
        }
    }
    let c = log_c.exp().max(1.0);
    Ok(MixingFit { c, beta, distances })
}

/// Everything the learners and diagnostics need to know about the chain.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryAnalysis {
    pub mu: DVector<f64>,
    pub mu_min: f64,
    pub mu_max: f64,
    pub g: f64,
    pub w_star: DVector<f64>,
    pub mix: MixingFit,
}

impl StationaryAnalysis {
    pub fn mix_c(&self) -> f64 {
        self.mix.c
    }

    pub fn mix_beta(&self) -> f64 {
        self.mix.beta
    }
}

/// Default horizon for the mixing fit.
pub const DEFAULT_MIXING_HORIZON: usize = 2000;

pub fn analyze(chain: &PolicyMarkovChain) -> Result<StationaryAnalysis> {
    analyze_with_horizon(chain, DEFAULT_MIXING_HORIZON)
}

pub fn analyze_with_horizon(chain: &PolicyMarkovChain, horizon: usize) -> Result<StationaryAnalysis> {
    let report = chain.validate();
    if !report.passes() {
        return structural(format!("chain is not ergodic: {}", report));
    }
    let mu = stationary_distribution(chain)?;
    let (g, w_star) = relative_value_function(chain, &mu)?;
    let mix = mixing_fit(chain, &mu, horizon)?;
    Ok(StationaryAnalysis {
        mu_min: mu.min(),
        mu_max: mu.max(),
        mu,
        g,
        w_star,
        mix,
    })
}
