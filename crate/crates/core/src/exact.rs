//! Exact fixed point of the projected Bellman equation.
//!
//! With `Pi = I - e mu^T` and `D = diag(mu)`, the linear-approximation fixed
//! point `theta*` solves
//!
//! ```text
//! Phi^T D (I - Pi P) Phi theta = Phi^T D Pi R
//! ```
//!
//! and the symmetric part of the system matrix equals
//! `sym(Phi^T D (I - P) Phi) + Phi^T mu mu^T Phi`, whose smallest eigenvalue is
//! `eta_1`. A positive `eta_1` therefore certifies the solve.

use nalgebra::{DMatrix, DVector};

use crate::error::{param, structural, Result};
use crate::geometry::{self, FeatureMap};
use crate::mdp::{PolicyMarkovChain, StationaryAnalysis};

/// Estimated condition numbers above this value are logged as a warning.
pub const CONDITION_WARN: f64 = 1e12;

/// `eta_1` at or below this value is treated as rank deficiency.
pub const ETA_TOL: f64 = 1e-12;

/// A fully assembled policy-evaluation problem with its exact solution.
#[derive(Debug, Clone)]
pub struct EvalProblem {
    pub chain: PolicyMarkovChain,
    pub analysis: StationaryAnalysis,
    pub features: FeatureMap,
    pub theta_star: DVector<f64>,
    /// `Phi theta*`
    pub w_lin: DVector<f64>,
    system: DMatrix<f64>,
    rhs: DVector<f64>,
}

/// `(Phi^T D (I - Pi P) Phi, Phi^T D Pi R)`
pub fn fixed_point_system(
    chain: &PolicyMarkovChain,
    mu: &DVector<f64>,
    features: &FeatureMap,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let n = chain.n();
    if features.n() != n || mu.len() != n {
        return param("features, chain and mu disagree on the number of states");
    }
    let phi = features.matrix();
    let d = DMatrix::from_diagonal(mu);
    let pi = geometry::pi_projection(mu);
    let i_minus_pi_p = DMatrix::<f64>::identity(n, n) - &pi * chain.transition();
    let phi_t_d = phi.transpose() * d;
    let a = &phi_t_d * i_minus_pi_p * phi;
    let b = &phi_t_d * (pi * chain.rewards());
    Ok((a, b))
}

fn condition_estimate(a: &DMatrix<f64>) -> f64 {
    let sv = a.clone().singular_values();
    let smin = sv.min();
    if smin <= 0.0 {
        f64::INFINITY
    } else {
        sv.max() / smin
    }
}

/// Unique solution `theta*` of the projected Bellman equation.
pub fn solve_theta_star(
    chain: &PolicyMarkovChain,
    analysis: &StationaryAnalysis,
    features: &FeatureMap,
) -> Result<DVector<f64>> {
    let (a, b) = fixed_point_system(chain, &analysis.mu, features)?;
    solve_system(chain, analysis, features, &a, &b)
}

fn solve_system(
    chain: &PolicyMarkovChain,
    analysis: &StationaryAnalysis,
    features: &FeatureMap,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
) -> Result<DVector<f64>> {
    let eta = match geometry::eta1(features, chain, &analysis.mu) {
        Ok(eta) if eta > ETA_TOL => eta,
        Ok(eta) => {
            return structural(format!(
                "eta1 = {:e} at rank tolerance: features are rank deficient",
                eta
            ))
        }
        Err(e) => return Err(e),
    };
    let cond = condition_estimate(a);
    if cond > CONDITION_WARN {
        log::warn!(
            "fixed-point system is ill-conditioned (cond ~ {:e}, eta1 = {:e})",
            cond,
            eta
        );
    }
    let lu = a.clone().lu();
    let mut theta = match lu.solve(b) {
        Some(x) => x,
        None => return structural("fixed-point system is singular"),
    };
    let resid = b - a * &theta;
    if let Some(corr) = lu.solve(&resid) {
        theta += corr;
    }
    Ok(theta)
}

impl EvalProblem {
    pub fn assemble(chain: PolicyMarkovChain, analysis: StationaryAnalysis, features: FeatureMap) -> Result<Self> {
        let (system, rhs) = fixed_point_system(&chain, &analysis.mu, &features)?;
        let theta_star = solve_system(&chain, &analysis, &features, &system, &rhs)?;
        let w_lin = features.values(&theta_star);
        Ok(Self {
            chain,
            analysis,
            features,
            theta_star,
            w_lin,
            system,
            rhs,
        })
    }

    pub fn system_matrix(&self) -> &DMatrix<f64> {
        &self.system
    }

    pub fn system_rhs(&self) -> &DVector<f64> {
        &self.rhs
    }

    /// Relative residual of the fixed-point equation at `theta`.
    pub fn residual_at(&self, theta: &DVector<f64>) -> f64 {
        (&self.system * theta - &self.rhs).norm() / (1.0 + self.rhs.norm())
    }

    /// Mean update direction of the double-chain learner,
    /// `Phi^T D (R + P Phi theta - Phi theta) - Phi^T mu mu^T (R + Phi theta)`.
    pub fn expected_update_field(&self, theta: &DVector<f64>) -> DVector<f64> {
        let phi = self.features.matrix();
        let mu = &self.analysis.mu;
        let r = self.chain.rewards();
        let v = phi * theta;
        let td = r + self.chain.transition() * &v - &v;
        let dtd = td.component_mul(mu);
        let level = mu.dot(&(r + &v));
        phi.transpose() * dtd - phi.transpose() * mu * level
    }
}

/// `||A theta* - b|| / (1 + ||b||)` at the stored solution.
pub fn projected_bellman_residual(problem: &EvalProblem) -> f64 {
    problem.residual_at(&problem.theta_star)
}
