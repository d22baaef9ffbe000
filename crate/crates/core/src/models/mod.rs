//! Dynamics and cost models, benchmark environments and their linearization.

mod envs;
mod features;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{identity, is_finite, is_finite_vec, min_eigenvalue, spd_inverse, symmetrize, Mat, Vector};

pub use envs::{
    cartpole, double_cartpole, env_names, linear_c1, make_env, pendulum, Cartpole, DoubleCartpole, EnvOverrides, LinearEnv, MechanicalEnv,
    Mechanism, Pendulum,
};
pub use features::{FeatureMap, TrigFeatures};

/// `x' = A x + B u + a + η`, `η ~ N(0, noise_cov)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearDynamics {
    pub A: Mat,
    pub B: Mat,
    pub a: Vector,
    pub noise_cov: Mat,
}

impl LinearDynamics {
    pub fn new(A: Mat, B: Mat, a: Vector, noise_cov: Mat) -> Result<Self> {
        let n = A.nrows();
        if A.ncols() != n || B.nrows() != n || a.len() != n || noise_cov.shape() != (n, n) {
            return Err(Error::dim(
                "LinearDynamics",
                format!("A {:?}, B {:?}, a {}, noise {:?}", A.shape(), B.shape(), a.len(), noise_cov.shape()),
            ));
        }
        if !is_finite(&A) || !is_finite(&B) || !is_finite_vec(&a) || !is_finite(&noise_cov) {
            return Err(Error::NonFinite("LinearDynamics".into()));
        }
        let noise_cov = symmetrize(&noise_cov);
        if min_eigenvalue(&noise_cov) < -1e-9 * noise_cov.amax().max(1.0) {
            return Err(Error::Invalid("process noise covariance is not positive semidefinite".into()));
        }
        Ok(Self { A, B, a, noise_cov })
    }

    pub fn state_dim(&self) -> usize {
        self.A.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.B.ncols()
    }

    pub fn mean_step(&self, x: &Vector, u: &Vector) -> Vector {
        &self.A * x + &self.B * u + &self.a
    }
}

/// Quadratic cost on features, read as a Gaussian observation of the target.
#[derive(Clone)]
pub struct ObservationModel {
    pub features: Arc<dyn FeatureMap>,
    pub target: Vector,
    pub weight: Mat,
    /// Feature-space weight used at the final step; `None` reuses `weight`.
    pub terminal_weight: Option<Mat>,
}

impl std::fmt::Debug for ObservationModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ObservationModel")
            .field("dim", &self.features.dim())
            .field("target", &self.target)
            .field("weight", &self.weight)
            .field("terminal_weight", &self.terminal_weight)
            .finish()
    }
}

impl ObservationModel {
    pub fn new(features: Arc<dyn FeatureMap>, target: Vector, weight: Mat) -> Result<Self> {
        let d = features.dim();
        if target.len() != d || weight.shape() != (d, d) {
            return Err(Error::dim("ObservationModel", format!("features {d}, target {}, weight {:?}", target.len(), weight.shape())));
        }
        if !is_finite_vec(&target) || !is_finite(&weight) {
            return Err(Error::NonFinite("ObservationModel".into()));
        }
        let weight = symmetrize(&weight);
        if min_eigenvalue(&weight) < -1e-9 * weight.amax().max(1.0) {
            return Err(Error::Invalid("cost weight is not positive semidefinite".into()));
        }
        Ok(Self { features, target, weight, terminal_weight: None })
    }

    /// Cost `Σ (x-x_g)ᵀQ(x-x_g) + (u-u_g)ᵀR(u-u_g)` as an observation of `[x; u]`.
    pub fn quadratic(Q: &Mat, R: &Mat, x_goal: &Vector, u_goal: &Vector) -> Result<Self> {
        let (nx, nu) = (Q.nrows(), R.nrows());
        let features = Arc::new(TrigFeatures::new(nx, nu, vec![]));
        let mut target = Vector::zeros(nx + nu);
        target.rows_mut(0, nx).copy_from(x_goal);
        target.rows_mut(nx, nu).copy_from(u_goal);
        Self::new(features, target, crate::linalg::block_diag(&[Q, R]))
    }

    pub fn with_terminal_weight(mut self, weight: Mat) -> Result<Self> {
        let d = self.dim();
        if weight.shape() != (d, d) {
            return Err(Error::dim("terminal_weight", format!("{:?} for {d} features", weight.shape())));
        }
        self.terminal_weight = Some(symmetrize(&weight));
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.features.dim()
    }

    pub fn weight_at(&self, terminal: bool) -> &Mat {
        match (&self.terminal_weight, terminal) {
            (Some(w), true) => w,
            _ => &self.weight,
        }
    }

    pub fn step_cost(&self, x: &Vector, u: &Vector, terminal: bool) -> f64 {
        let r = self.features.eval(x, u) - &self.target;
        (r.transpose() * self.weight_at(terminal) * &r)[(0, 0)]
    }
}

/// Affine approximation `z ≈ E x + F u + e` with noise covariance `(αΘ)⁻¹`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearizedObservation {
    pub E: Mat,
    pub F: Mat,
    pub e: Vector,
    /// The observed value (the feature target).
    pub target: Vector,
    /// Cost weight `Θ` at this step.
    pub weight: Mat,
    pub noise_cov: Mat,
    pub precision: Mat,
    pub alpha: f64,
}

impl LinearizedObservation {
    /// Build from Jacobians; `noise_cov` and `precision` follow from `alpha·weight`.
    pub fn new(E: Mat, F: Mat, e: Vector, target: Vector, weight: Mat, alpha: f64) -> Result<Self> {
        if !alpha.is_finite() || alpha <= 0.0 {
            return Err(Error::Invalid(format!("alpha must be positive and finite, got {alpha}")));
        }
        let d = E.nrows();
        if F.nrows() != d || e.len() != d || target.len() != d || weight.shape() != (d, d) {
            return Err(Error::dim(
                "LinearizedObservation",
                format!("E {:?}, F {:?}, e {}, target {}, weight {:?}", E.shape(), F.shape(), e.len(), target.len(), weight.shape()),
            ));
        }
        if !is_finite(&E) || !is_finite(&F) || !is_finite_vec(&e) {
            return Err(Error::NonFinite("observation Jacobian".into()));
        }
        let precision = symmetrize(&(&weight * alpha));
        if precision.clone().cholesky().is_none() {
            return Err(Error::Singular("cost weight Θ".into()));
        }
        let noise_cov = spd_inverse(&precision, "cost weight αΘ")?;
        Ok(Self { E, F, e, target, weight, noise_cov, precision, alpha })
    }

    pub fn dim(&self) -> usize {
        self.E.nrows()
    }

    /// Residual `z − E x − F u − e`.
    pub fn residual(&self, x: &Vector, u: &Vector) -> Vector {
        &self.target - &self.E * x - &self.F * u - &self.e
    }
}

/// A named system with nonlinear dynamics, a quadratic feature cost and
/// box input limits.
pub trait Environment: Send + Sync {
    fn name(&self) -> &str;
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn dt(&self) -> f64;
    fn horizon(&self) -> usize;
    /// Per-input `(lo, hi)`; `None` means unconstrained.
    fn input_limits(&self) -> Option<&[(f64, f64)]>;
    fn noise_cov(&self) -> &Mat;
    fn initial_state(&self) -> Vector;
    fn observation_model(&self) -> ObservationModel;
    /// Mean next state for an input already inside the limits.
    fn dynamics(&self, x: &Vector, u: &Vector) -> Vector;
    /// Analytic Jacobians of [`Environment::dynamics`], when available.
    fn dynamics_jacobians(&self, _x: &Vector, _u: &Vector) -> Option<(Mat, Mat)> {
        None
    }
}

pub fn clip_input(env: &dyn Environment, u: &Vector) -> Vector {
    match env.input_limits() {
        None => u.clone(),
        Some(lim) => Vector::from_iterator(u.len(), u.iter().zip(lim).map(|(v, (lo, hi))| v.clamp(*lo, *hi))),
    }
}

fn saturated(env: &dyn Environment, u: &Vector) -> Vec<bool> {
    match env.input_limits() {
        None => vec![false; u.len()],
        Some(lim) => u.iter().zip(lim).map(|(v, (lo, hi))| *v < *lo || *v > *hi).collect(),
    }
}

fn check_dims(env: &dyn Environment, x: &Vector, u: &Vector) -> Result<()> {
    if x.len() != env.state_dim() || u.len() != env.input_dim() {
        return Err(Error::dim(
            "environment",
            format!("state {} input {} for {} ({}, {})", x.len(), u.len(), env.name(), env.state_dim(), env.input_dim()),
        ));
    }
    Ok(())
}

/// One environment step: clip, integrate, optionally add a noise sample.
pub fn env_step(env: &dyn Environment, x: &Vector, u: &Vector, noise: Option<&Vector>) -> Result<Vector> {
    check_dims(env, x, u)?;
    let mut next = env.dynamics(x, &clip_input(env, u));
    if let Some(w) = noise {
        if w.len() != next.len() {
            return Err(Error::dim("env_step noise", format!("{} vs {}", w.len(), next.len())));
        }
        next += w;
    }
    if !is_finite_vec(&next) {
        return Err(Error::Divergence { state: next.iter().copied().collect() });
    }
    Ok(next)
}

/// Central differences with step `1e-6·max(1, |v_i|)`.
pub fn finite_difference_jacobians(env: &dyn Environment, x: &Vector, u: &Vector) -> (Mat, Mat) {
    let f = |x: &Vector, u: &Vector| env.dynamics(x, u);
    let n = x.len();
    let mut A = Mat::zeros(n, n);
    for i in 0..n {
        let h = 1e-6 * x[i].abs().max(1.0);
        let (mut xp, mut xm) = (x.clone(), x.clone());
        xp[i] += h;
        xm[i] -= h;
        A.set_column(i, &((f(&xp, u) - f(&xm, u)) / (2.0 * h)));
    }
    let mut B = Mat::zeros(n, u.len());
    for j in 0..u.len() {
        let h = 1e-6 * u[j].abs().max(1.0);
        let (mut up, mut um) = (u.clone(), u.clone());
        up[j] += h;
        um[j] -= h;
        B.set_column(j, &((f(x, &up) - f(x, &um)) / (2.0 * h)));
    }
    (A, B)
}

/// Affine model of one environment step around `(x0, u0)`.
///
/// Inputs outside the limits are clipped first and their columns of `B` are
/// zeroed, so the offset `a` absorbs the saturated value.
pub fn linearize_dynamics(env: &dyn Environment, x0: &Vector, u0: &Vector) -> Result<LinearDynamics> {
    check_dims(env, x0, u0)?;
    if !is_finite_vec(x0) || !is_finite_vec(u0) {
        return Err(Error::NonFinite("linearization point".into()));
    }
    let uc = clip_input(env, u0);
    let (A, mut B) = env.dynamics_jacobians(x0, &uc).unwrap_or_else(|| finite_difference_jacobians(env, x0, &uc));
    for (j, sat) in saturated(env, u0).into_iter().enumerate() {
        if sat {
            B.column_mut(j).fill(0.0);
        }
    }
    let fx = env.dynamics(x0, &uc);
    if !is_finite(&A) || !is_finite(&B) || !is_finite_vec(&fx) {
        return Err(Error::NonFinite(format!("{} dynamics Jacobian", env.name())));
    }
    let a = fx - &A * x0 - &B * u0;
    LinearDynamics::new(A, B, a, env.noise_cov().clone())
}

fn linearize_with_weight(model: &ObservationModel, weight: &Mat, alpha: f64, x0: &Vector, u0: &Vector) -> Result<LinearizedObservation> {
    if alpha.is_nan() || alpha <= 0.0 {
        return Err(Error::Invalid(format!("alpha must be positive, got {alpha}")));
    }
    let (E, F) = model.features.jacobians(x0, u0);
    let e = model.features.eval(x0, u0) - &E * x0 - &F * u0;
    LinearizedObservation::new(E, F, e, model.target.clone(), weight.clone(), alpha)
}

/// Affine model of the feature map around `(x0, u0)` with `Σ_ξ = (αΘ)⁻¹`.
pub fn linearize_observation(model: &ObservationModel, alpha: f64, x0: &Vector, u0: &Vector) -> Result<LinearizedObservation> {
    linearize_with_weight(model, &model.weight, alpha, x0, u0)
}

/// As [`linearize_observation`] with the terminal weight.
pub fn linearize_terminal_observation(model: &ObservationModel, alpha: f64, x0: &Vector, u0: &Vector) -> Result<LinearizedObservation> {
    linearize_with_weight(model, model.weight_at(true), alpha, x0, u0)
}

/// `Σ_t (g(x_t,u_t) − z_g)ᵀ Θ (g(x_t,u_t) − z_g)` over `t = 0..=T`.
pub fn trajectory_cost(model: &ObservationModel, xs: &[Vector], us: &[Vector]) -> Result<f64> {
    if xs.len() != us.len() || xs.is_empty() {
        return Err(Error::dim("trajectory_cost", format!("{} states, {} inputs", xs.len(), us.len())));
    }
    Ok(step_costs(model, xs, us).iter().sum())
}

/// Per-step terms of [`trajectory_cost`].
pub fn step_costs(model: &ObservationModel, xs: &[Vector], us: &[Vector]) -> Vec<f64> {
    let last = xs.len().saturating_sub(1);
    xs.iter().zip(us).enumerate().map(|(t, (x, u))| model.step_cost(x, u, t == last)).collect()
}

pub(crate) fn diag(values: &[f64]) -> Mat {
    Mat::from_diagonal(&Vector::from_column_slice(values))
}

pub(crate) fn eye(n: usize) -> Mat {
    identity(n)
}
