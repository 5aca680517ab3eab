//! Weighted norms, projections and condition numbers.
//!
//! All extremal quadratic forms here are computed through the symmetric part
//! of the (generally non-symmetric) matrices involved, because the extrema of
//! `x^T A x` over a sphere are the extreme eigenvalues of `(A + A^T) / 2`.
//! Constrained problems are reduced to unconstrained ones by building an
//! explicit orthonormal basis of the constraint subspace, in the Euclidean or
//! in the `D = diag(mu)` inner product.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{param, structural, Result};
use crate::mdp::{PolicyMarkovChain, StationaryAnalysis};

/// Slack allowed on the row-norm normalization of features.
pub const ROW_NORM_TOL: f64 = 1e-12;

/// Relative singular-value cutoff for numerical rank.
pub const RANK_TOL: f64 = 1e-10;

/// Feature matrix with rows `phi(s)^T`.
///
/// Rows have Euclidean norm at most one and the columns are linearly
/// independent; both are checked on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    phi: DMatrix<f64>,
    // row-major copy for fast phi(s) access in the learners
    rows: Vec<f64>,
}

impl FeatureMap {
    pub fn new(phi: DMatrix<f64>) -> Result<Self> {
        let (n, d) = phi.shape();
        if n == 0 || d == 0 {
            return param("feature matrix must be non-empty");
        }
        if d > n {
            return param(format!("feature dimension {} exceeds state count {}", d, n));
        }
        if phi.iter().any(|x| !x.is_finite()) {
            return param("feature matrix has non-finite entries");
        }
        for s in 0..n {
            let norm = phi.row(s).norm();
            if norm > 1.0 + ROW_NORM_TOL {
                return param(format!("feature row {} has norm {} > 1", s, norm));
            }
        }
        let rank = numerical_rank(&phi);
        if rank < d {
            return structural(format!("feature matrix has rank {} < {} columns", rank, d));
        }
        let mut rows = Vec::with_capacity(n * d);
        for s in 0..n {
            rows.extend(phi.row(s).iter());
        }
        Ok(Self { phi, rows })
    }

    /// Identity features, i.e. the tabular representation.
    pub fn tabular(n: usize) -> Self {
        Self::new(DMatrix::identity(n, n)).expect("identity features are valid")
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.phi
    }

    pub fn n(&self) -> usize {
        self.phi.nrows()
    }

    pub fn d(&self) -> usize {
        self.phi.ncols()
    }

    #[inline]
    pub fn row(&self, s: usize) -> &[f64] {
        let d = self.d();
        &self.rows[s * d..(s + 1) * d]
    }

    /// `phi(s)^T theta`
    #[inline]
    pub fn value(&self, s: usize, theta: &[f64]) -> f64 {
        self.row(s).iter().zip(theta).map(|(a, b)| a * b).sum()
    }

    /// `Phi theta` as a vector over states.
    pub fn values(&self, theta: &DVector<f64>) -> DVector<f64> {
        &self.phi * theta
    }
}

/// Number of singular values above `RANK_TOL * sigma_max`.
pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    let sv = m.clone().singular_values();
    let smax = sv.max();
    if smax <= 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_TOL * smax).count()
}

fn check_len(f: &DVector<f64>, mu: &DVector<f64>) -> Result<()> {
    if f.len() != mu.len() {
        return param(format!("vector has length {}, expected {}", f.len(), mu.len()));
    }
    Ok(())
}

/// `sqrt(sum_s mu(s) f(s)^2)`
pub fn d_norm(f: &DVector<f64>, mu: &DVector<f64>) -> Result<f64> {
    check_len(f, mu)?;
    Ok(f.iter().zip(mu.iter()).map(|(x, m)| m * x * x).sum::<f64>().sqrt())
}

/// Dirichlet seminorm from its pairwise definition,
/// `sqrt(1/2 sum_{s,s'} mu(s) P(s'|s) (f(s) - f(s'))^2)`.
pub fn dirichlet_seminorm(f: &DVector<f64>, chain: &PolicyMarkovChain, mu: &DVector<f64>) -> Result<f64> {
    check_len(f, mu)?;
    if chain.n() != f.len() {
        return param("vector length does not match the chain");
    }
    let p = chain.transition();
    let n = f.len();
    let mut acc = 0.0;
    for s in 0..n {
        for t in 0..n {
            let diff = f[s] - f[t];
            acc += mu[s] * p[(s, t)] * diff * diff;
        }
    }
    Ok((0.5 * acc).max(0.0).sqrt())
}

/// `D (I - P)`, whose quadratic form is the squared Dirichlet seminorm when
/// `mu` is stationary.
pub fn dirichlet_operator(chain: &PolicyMarkovChain, mu: &DVector<f64>) -> DMatrix<f64> {
    let n = chain.n();
    let d = DMatrix::from_diagonal(mu);
    &d * (DMatrix::<f64>::identity(n, n) - chain.transition())
}

pub fn sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// `Pi = I - e mu^T`
pub fn pi_projection(mu: &DVector<f64>) -> DMatrix<f64> {
    let n = mu.len();
    DMatrix::<f64>::identity(n, n) - DVector::from_element(n, 1.0) * mu.transpose()
}

/// `Pi_D = Phi (Phi^T D Phi)^-1 Phi^T D`, the `D`-orthogonal projection onto
/// the column space of `Phi`.
pub fn d_projection(features: &FeatureMap, mu: &DVector<f64>) -> Result<DMatrix<f64>> {
    let phi = features.matrix();
    if phi.nrows() != mu.len() {
        return param("feature rows do not match mu");
    }
    let d = DMatrix::from_diagonal(mu);
    let gram = phi.transpose() * &d * phi;
    let inv = match gram.try_inverse() {
        Some(inv) => inv,
        None => return structural("Phi^T D Phi is singular"),
    };
    Ok(phi * inv * phi.transpose() * d)
}

fn eigenvalues(m: &DMatrix<f64>) -> DVector<f64> {
    SymmetricEigen::new(m.clone()).eigenvalues
}

fn min_eig(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    eigenvalues(m).min()
}

fn max_eig(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    eigenvalues(m).max()
}

/// Orthonormal basis (as columns) of the Euclidean complement of `v`,
/// taken from the Householder reflector that maps `v` onto the first axis.
pub fn orthonormal_complement(v: &DVector<f64>) -> DMatrix<f64> {
    let n = v.len();
    let norm = v.norm();
    assert!(norm > 0.0, "complement of the zero vector");
    let mut u = v / norm;
    // reflect onto -sign(u0) e1 to avoid cancellation
    let sign = if u[0] >= 0.0 { 1.0 } else { -1.0 };
    u[0] += sign;
    let unorm = u.norm();
    u /= unorm;
    let h = DMatrix::<f64>::identity(n, n) - &u * u.transpose() * 2.0;
    h.columns(1, n - 1).into_owned()
}

/// Basis of `{y : mu^T y = 0}` that is orthonormal in the `D` inner
/// product, so `B^T D B = I`.
///
/// With `y = D^{-1/2} z` the constraint becomes `sqrt(mu)^T z = 0` and the
/// `D`-inner product becomes Euclidean, so `B = D^{-1/2} Q` for a Euclidean
/// orthonormal complement `Q` of `sqrt(mu)`.
pub fn centered_d_basis(mu: &DVector<f64>) -> DMatrix<f64> {
    let root = mu.map(f64::sqrt);
    let mut q = orthonormal_complement(&root);
    for (i, r) in root.iter().enumerate() {
        q.row_mut(i).scale_mut(1.0 / r);
    }
    q
}

fn check_problem(features: &FeatureMap, chain: &PolicyMarkovChain, mu: &DVector<f64>) -> Result<()> {
    if features.n() != chain.n() || mu.len() != chain.n() {
        return param(format!(
            "dimension mismatch: features {} rows, chain {} states, mu length {}",
            features.n(),
            chain.n(),
            mu.len()
        ));
    }
    Ok(())
}

/// `sym(Phi^T D (I - P) Phi)`, the Hessian-like matrix of the Dirichlet part.
pub fn feature_dirichlet_matrix(features: &FeatureMap, chain: &PolicyMarkovChain, mu: &DVector<f64>) -> DMatrix<f64> {
    let phi = features.matrix();
    sym(&(phi.transpose() * dirichlet_operator(chain, mu) * phi))
}

/// `eta_1 = min_{|x|=1} ||Phi x||_Dir^2 + (mu^T Phi x)^2`.
pub fn eta1(features: &FeatureMap, chain: &PolicyMarkovChain, mu: &DVector<f64>) -> Result<f64> {
    check_problem(features, chain, mu)?;
    let phi_mu = features.matrix().transpose() * mu;
    let m = feature_dirichlet_matrix(features, chain, mu) + &phi_mu * phi_mu.transpose();
    let eta = min_eig(&m);
    if !(eta > 0.0) {
        return structural(format!("eta1 = {:e} is not positive; features are rank deficient", eta));
    }
    Ok(eta)
}

/// `eta_2 = min ||Phi x||_Dir^2` over unit `x` in `R^d` with `sum_i x_i = 0`.
pub fn eta2(features: &FeatureMap, chain: &PolicyMarkovChain, mu: &DVector<f64>) -> Result<f64> {
    check_problem(features, chain, mu)?;
    let d = features.d();
    if d < 2 {
        return param("eta2 needs at least two features");
    }
    let b = orthonormal_complement(&DVector::from_element(d, 1.0));
    let m = b.transpose() * feature_dirichlet_matrix(features, chain, mu) * &b;
    Ok(min_eig(&m).max(0.0))
}

/// `lambda_min(Phi^T D Phi)`.
pub fn eta_prime(features: &FeatureMap, mu: &DVector<f64>) -> Result<f64> {
    if features.n() != mu.len() {
        return param("feature rows do not match mu");
    }
    let phi = features.matrix();
    let gram = phi.transpose() * DMatrix::from_diagonal(mu) * phi;
    let l = min_eig(&gram);
    if !(l > 0.0) {
        return structural("Phi^T D Phi is singular");
    }
    Ok(l)
}

/// `min { y^T D (I - P) y : mu^T y = 0, ||y||_D = 1 }`.
pub fn centered_dirichlet_gap(chain: &PolicyMarkovChain, mu: &DVector<f64>) -> Result<f64> {
    if mu.len() != chain.n() {
        return param("mu length does not match the chain");
    }
    if chain.n() < 2 {
        return param("the centered subspace is empty for a single state");
    }
    let b = centered_d_basis(mu);
    let m = b.transpose() * sym(&dirichlet_operator(chain, mu)) * &b;
    Ok(min_eig(&m))
}

/// `eta_3 = lambda_min(Phi^T D Phi) * centered_dirichlet_gap`.
pub fn eta3(features: &FeatureMap, chain: &PolicyMarkovChain, mu: &DVector<f64>) -> Result<f64> {
    check_problem(features, chain, mu)?;
    Ok(eta_prime(features, mu)? * centered_dirichlet_gap(chain, mu)?)
}

/// Contraction modulus of `Pi T` in the `D`-norm on the centered subspace:
/// `sqrt(max { z^T P^T D P z : mu^T z = 0, ||z||_D = 1 })`.
pub fn contraction_factor(chain: &PolicyMarkovChain, mu: &DVector<f64>) -> Result<f64> {
    if mu.len() != chain.n() {
        return param("mu length does not match the chain");
    }
    if chain.n() < 2 {
        return Ok(0.0);
    }
    let p = chain.transition();
    let ptdp = p.transpose() * DMatrix::from_diagonal(mu) * p;
    let b = centered_d_basis(mu);
    let m = sym(&(b.transpose() * ptdp * &b));
    let omega = max_eig(&m).max(0.0).sqrt();
    if !(omega < 1.0) {
        return structural(format!("contraction factor {} is not below one", omega));
    }
    Ok(omega)
}

/// Ball radii for the single-chain learner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionRadii {
    pub r_w: f64,
    pub r_theta: f64,
}

/// `2 r_max C / ((1 - beta) sqrt((1 - omega^2) lambda_min))`.
pub fn theta_radius(r_max: f64, mix_c: f64, mix_beta: f64, omega: f64, eta_prime: f64) -> Result<f64> {
    if !(omega < 1.0) {
        return structural(format!("contraction factor {} is not below one", omega));
    }
    if !(eta_prime > 0.0) {
        return structural("Phi^T D Phi is singular");
    }
    if !(0.0..1.0).contains(&mix_beta) {
        return param(format!("mixing rate {} outside [0, 1)", mix_beta));
    }
    Ok(2.0 * r_max * mix_c / ((1.0 - mix_beta) * ((1.0 - omega * omega) * eta_prime).sqrt()))
}

pub fn projection_radii(
    chain: &PolicyMarkovChain,
    mu: &DVector<f64>,
    features: &FeatureMap,
    mix_c: f64,
    mix_beta: f64,
    omega: f64,
) -> Result<ProjectionRadii> {
    let ep = eta_prime(features, mu)?;
    Ok(ProjectionRadii {
        r_w: 1.0,
        r_theta: theta_radius(chain.r_max(), mix_c, mix_beta, omega, ep)?,
    })
}

/// Condition numbers and radii recorded with every experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport {
    pub eta1: f64,
    /// Undefined for a single feature.
    pub eta2: Option<f64>,
    pub eta3: f64,
    pub eta_prime: f64,
    pub omega: f64,
    #[serde(rename = "R_w")]
    pub r_w: f64,
    #[serde(rename = "R_theta")]
    pub r_theta: f64,
}

pub fn spectral_report(
    chain: &PolicyMarkovChain,
    analysis: &StationaryAnalysis,
    features: &FeatureMap,
) -> Result<SpectralReport> {
    let mu = &analysis.mu;
    let omega = contraction_factor(chain, mu)?;
    let radii = projection_radii(chain, mu, features, analysis.mix.c, analysis.mix.beta, omega)?;
    Ok(SpectralReport {
        eta1: eta1(features, chain, mu)?,
        eta2: if features.d() >= 2 {
            Some(eta2(features, chain, mu)?)
        } else {
            None
        },
        eta3: eta3(features, chain, mu)?,
        eta_prime: eta_prime(features, mu)?,
        omega,
        r_w: radii.r_w,
        r_theta: radii.r_theta,
    })
}
