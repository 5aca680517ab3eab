//! Stochastic learners.
//!
//! * [`DoubleChainState`]: the update driven by two independent chains,
//!   `theta += alpha (f + g)` with
//!   `f = -(r_s + phi(s)^T theta) phi(s_hat)` and
//!   `g = (r_s + phi(s')^T theta - phi(s)^T theta) phi(s)`.
//! * [`SingleChainState`]: replaces `phi(s_hat)` by a running estimate `w`
//!   of `Phi^T mu`, with both iterates kept inside Euclidean balls.
//! * [`CoupledBaseline`]: the classical average-reward TD recursion that
//!   tracks the gain with a scalar, used only as a comparator.
//! * [`RewardEstimator`]: running mean of observed rewards.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::geometry::FeatureMap;

/// Step sizes `alpha_t` and `beta_t = rho0 * alpha_t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepSchedule {
    Constant {
        alpha: f64,
        #[serde(default = "default_rho0")]
        rho0: f64,
    },
    /// `alpha_t = a / (t + c0)^xi`
    Decaying {
        a: f64,
        c0: f64,
        xi: f64,
        #[serde(default = "default_rho0")]
        rho0: f64,
    },
}

fn default_rho0() -> f64 {
    1.0
}

impl StepSchedule {
    pub fn constant(alpha: f64, rho0: f64) -> Result<Self> {
        let s = StepSchedule::Constant { alpha, rho0 };
        s.validate()?;
        Ok(s)
    }

    pub fn decaying(a: f64, c0: f64, xi: f64, rho0: f64) -> Result<Self> {
        let s = StepSchedule::Decaying { a, c0, xi, rho0 };
        s.validate()?;
        Ok(s)
    }

    /// Checks the parameters once so per-step evaluation cannot fail.
    pub fn validate(&self) -> Result<()> {
        let rho0 = match *self {
            StepSchedule::Constant { alpha, rho0 } => {
                if !(alpha > 0.0 && alpha.is_finite()) {
                    return param(format!("constant step size must be positive, got {}", alpha));
                }
                rho0
            }
            StepSchedule::Decaying { a, c0, xi, rho0 } => {
                if !(a > 0.0 && a.is_finite()) {
                    return param(format!("schedule numerator must be positive, got {}", a));
                }
                if !(c0 > 0.0 && c0.is_finite()) {
                    return param(format!("schedule offset c0 must be positive, got {}", c0));
                }
                if !(xi > 0.0 && xi <= 1.0) {
                    return param(format!("schedule exponent must lie in (0, 1], got {}", xi));
                }
                rho0
            }
        };
        if !(rho0 > 0.0 && rho0 <= 1.0) {
            return param(format!("rho0 must lie in (0, 1], got {}", rho0));
        }
        Ok(())
    }

    pub fn rho0(&self) -> f64 {
        match *self {
            StepSchedule::Constant { rho0, .. } | StepSchedule::Decaying { rho0, .. } => rho0,
        }
    }

    pub fn alpha(&self, t: u64) -> f64 {
        match *self {
            StepSchedule::Constant { alpha, .. } => alpha,
            StepSchedule::Decaying { a, c0, xi, .. } => {
                let base = t as f64 + c0;
                if xi == 1.0 {
                    a / base
                } else {
                    a / base.powf(xi)
                }
            }
        }
    }

    /// `(alpha_t, beta_t)`
    pub fn step_size(&self, t: u64) -> (f64, f64) {
        let a = self.alpha(t);
        (a, self.rho0() * a)
    }

    /// Short label used in file names and reports.
    pub fn label(&self) -> String {
        match *self {
            StepSchedule::Constant { alpha, .. } => format!("const{}", alpha),
            StepSchedule::Decaying { a, c0, xi, .. } => format!("decay{}_{}_{}", a, c0, xi),
        }
    }
}

fn check_index(s: usize, n: usize, what: &str) -> Result<()> {
    if s >= n {
        return param(format!("{} index {} out of range for {} states", what, s, n));
    }
    Ok(())
}

fn ensure_finite(v: &DVector<f64>, step: u64, what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            step,
            what: what.to_string(),
        })
    }
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Scales `v` onto the ball of radius `radius` when it lies outside.
pub fn project_to_ball(v: &mut DVector<f64>, radius: f64) {
    let norm = v.norm();
    if norm > radius {
        *v *= radius / norm;
        // rounding can leave the norm a few ulps above the radius
        while v.norm() > radius {
            *v *= 1.0 - f64::EPSILON;
        }
    }
}

/// One transition `(s, s')` of the primary chain plus, for the double-chain
/// learner, the current state of the independent second chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sample {
    pub s: usize,
    pub s_next: usize,
    pub s_hat: Option<usize>,
}

/// Update direction `f + g` of the double-chain learner.
pub fn double_chain_direction(
    theta: &DVector<f64>,
    s: usize,
    s_next: usize,
    s_hat: usize,
    rewards: &DVector<f64>,
    features: &FeatureMap,
) -> Result<DVector<f64>> {
    let n = features.n();
    check_index(s, n, "state")?;
    check_index(s_next, n, "next state")?;
    check_index(s_hat, n, "second-chain state")?;
    let th = theta.as_slice();
    let r = rewards[s];
    let v_s = features.value(s, th);
    let v_next = features.value(s_next, th);
    let mut dir = DVector::zeros(features.d());
    axpy(dir.as_mut_slice(), -(r + v_s), features.row(s_hat));
    axpy(dir.as_mut_slice(), r + v_next - v_s, features.row(s));
    Ok(dir)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DoubleChainState {
    pub theta: DVector<f64>,
    pub t: u64,
}

impl DoubleChainState {
    pub fn new(theta: DVector<f64>) -> Self {
        Self { theta, t: 0 }
    }

    pub fn zeros(d: usize) -> Self {
        Self::new(DVector::zeros(d))
    }

    pub fn step(&mut self, sample: Sample, rewards: &DVector<f64>, features: &FeatureMap, alpha: f64) -> Result<()> {
        let s_hat = match sample.s_hat {
            Some(h) => h,
            None => return param("double-chain step needs a second-chain state"),
        };
        let n = features.n();
        check_index(sample.s, n, "state")?;
        check_index(sample.s_next, n, "next state")?;
        check_index(s_hat, n, "second-chain state")?;
        let r = rewards[sample.s];
        let th = self.theta.as_slice();
        let v_s = features.value(sample.s, th);
        let v_next = features.value(sample.s_next, th);
        let theta = self.theta.as_mut_slice();
        axpy(theta, -alpha * (r + v_s), features.row(s_hat));
        axpy(theta, alpha * (r + v_next - v_s), features.row(sample.s));
        self.t += 1;
        ensure_finite(&self.theta, self.t, "double-chain theta")
    }

    /// Deterministic variant `theta += alpha * h(theta)` for a supplied mean
    /// field `h`.
    pub fn mean_field_step(&mut self, field: &DVector<f64>, alpha: f64) -> Result<()> {
        self.theta.axpy(alpha, field, 1.0);
        self.t += 1;
        ensure_finite(&self.theta, self.t, "double-chain theta")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SingleChainState {
    pub theta: DVector<f64>,
    pub w: DVector<f64>,
    pub r_theta: f64,
    pub r_w: f64,
    pub t: u64,
}

impl SingleChainState {
    pub fn new(theta: DVector<f64>, w: DVector<f64>, r_theta: f64, r_w: f64) -> Result<Self> {
        if !(r_theta > 0.0) || !(r_w > 0.0) {
            return param(format!(
                "projection radii must be positive, got R_theta={} R_w={}",
                r_theta, r_w
            ));
        }
        if theta.len() != w.len() {
            return param("theta and w must have the same dimension");
        }
        let mut st = Self {
            theta,
            w,
            r_theta,
            r_w,
            t: 0,
        };
        project_to_ball(&mut st.theta, r_theta);
        project_to_ball(&mut st.w, r_w);
        Ok(st)
    }

    pub fn zeros(d: usize, r_theta: f64, r_w: f64) -> Result<Self> {
        Self::new(DVector::zeros(d), DVector::zeros(d), r_theta, r_w)
    }

    /// Both updates read the pre-step iterates.
    pub fn step(
        &mut self,
        sample: Sample,
        rewards: &DVector<f64>,
        features: &FeatureMap,
        alpha: f64,
        beta: f64,
    ) -> Result<()> {
        let n = features.n();
        check_index(sample.s, n, "state")?;
        check_index(sample.s_next, n, "next state")?;
        let r = rewards[sample.s];
        let th = self.theta.as_slice();
        let v_s = features.value(sample.s, th);
        let v_next = features.value(sample.s_next, th);
        let phi_s = features.row(sample.s);

        axpy(self.theta.as_mut_slice(), alpha * (r + v_next - v_s), phi_s);
        axpy(self.theta.as_mut_slice(), -alpha * (r + v_s), self.w.as_slice());
        project_to_ball(&mut self.theta, self.r_theta);

        // w += beta (phi(s) - w)
        self.w *= 1.0 - beta;
        axpy(self.w.as_mut_slice(), beta, phi_s);
        project_to_ball(&mut self.w, self.r_w);

        self.t += 1;
        ensure_finite(&self.theta, self.t, "single-chain theta")?;
        ensure_finite(&self.w, self.t, "single-chain w")
    }
}

/// Classical coupled recursion tracking the gain with a scalar estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledBaseline {
    pub theta: DVector<f64>,
    pub g_est: f64,
    pub t: u64,
}

impl CoupledBaseline {
    pub fn new(theta: DVector<f64>, g_est: f64) -> Self {
        Self { theta, g_est, t: 0 }
    }

    pub fn zeros(d: usize) -> Self {
        Self::new(DVector::zeros(d), 0.0)
    }

    /// `g += alpha (r - g)`, then
    /// `theta += alpha (r - g + phi(s')^T theta - phi(s)^T theta) phi(s)`
    /// with the updated `g`.
    pub fn step(&mut self, sample: Sample, rewards: &DVector<f64>, features: &FeatureMap, alpha: f64) -> Result<()> {
        let n = features.n();
        check_index(sample.s, n, "state")?;
        check_index(sample.s_next, n, "next state")?;
        let r = rewards[sample.s];
        self.g_est += alpha * (r - self.g_est);
        let th = self.theta.as_slice();
        let td = r - self.g_est + features.value(sample.s_next, th) - features.value(sample.s, th);
        axpy(self.theta.as_mut_slice(), alpha * td, features.row(sample.s));
        self.t += 1;
        if !self.g_est.is_finite() {
            return Err(Error::NonFinite {
                step: self.t,
                what: "baseline gain estimate".into(),
            });
        }
        ensure_finite(&self.theta, self.t, "baseline theta")
    }
}

/// Running average `r_t = (r_0 + ... + r_{t-1}) / t`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RewardEstimator {
    pub sum: f64,
    pub count: u64,
}

impl RewardEstimator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn update(&mut self, r: f64) {
        self.sum += r;
        self.count += 1;
    }

    /// `None` before the first reward.
    pub fn estimate(&self) -> Option<f64> {
        if self.count == 0 {
            None
        } else {
            Some(self.sum / self.count as f64)
        }
    }
}
