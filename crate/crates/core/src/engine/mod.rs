//! Expectation maximization over the per-timestep factor graph.
//!
//! Each E-step runs a forward (filtering) and a backward (smoothing) sweep of
//! Gaussian messages; the M-step rescales the observation precision `α`.

mod em;
mod passes;
mod problem;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{GaussianAuxiliary, GaussianCanonical, GaussianMoment};
use crate::linalg::Vector;
use crate::models::{LinearDynamics, LinearizedObservation};

pub use em::{em_iterate, m_step_alpha, nll_surrogate, AlphaUpdate, EmResult, TraceRecord};
pub use passes::{backward_pass, forward_pass, LinearizationPoints};
pub use problem::{EnvProblem, LinearProblem, ObservationTerm, Problem};

/// Messages on every edge of one timestep.
///
/// Edge names follow the graph: `x_fwd` is `X_t`, `x_innov` is `X′_t` (after
/// the cost observation), `x_prop` is `X″_t = A X′_t + a`, `x_noisy` is
/// `X‴_t = X″_t + η` and `u_prop` is `U″_t = B U′_t`, so that
/// `X_{t+1} = X‴_t + U″_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageState {
    pub dynamics: Option<LinearDynamics>,
    pub observation: LinearizedObservation,
    pub x_fwd: GaussianMoment,
    pub u_prior: GaussianMoment,
    /// Observation message into `X_t`.
    pub x_obs: GaussianCanonical,
    /// Observation message into `U_t`.
    pub u_obs: GaussianCanonical,
    pub x_innov: GaussianMoment,
    pub u_innov: GaussianMoment,
    pub x_prop: Option<GaussianMoment>,
    pub x_noisy: Option<GaussianMoment>,
    pub u_prop: Option<GaussianMoment>,
    /// Backward message on `X_t`.
    pub x_bwd: Option<GaussianCanonical>,
    /// Backward message on `X‴_t`.
    pub x_noisy_bwd: Option<GaussianCanonical>,
    /// Auxiliary form on `X_t`.
    pub x_aux: Option<GaussianAuxiliary>,
    pub x_marg: Option<GaussianMoment>,
    pub u_marg: Option<GaussianMoment>,
}

impl MessageState {
    pub fn x_marginal(&self) -> Result<&GaussianMoment> {
        self.x_marg.as_ref().ok_or_else(|| Error::Invalid("backward pass has not run".into()))
    }

    pub fn u_marginal(&self) -> Result<&GaussianMoment> {
        self.u_marg.as_ref().ok_or_else(|| Error::Invalid("backward pass has not run".into()))
    }

    pub fn backward(&self) -> Result<&GaussianCanonical> {
        self.x_bwd.as_ref().ok_or_else(|| Error::Invalid("backward pass has not run".into()))
    }
}

/// Marginal means `(x̂_t, û_t)` for `t = 0..=T`.
pub fn marginal_means(msgs: &[MessageState]) -> Result<(Vec<Vector>, Vec<Vector>)> {
    let xs = msgs.iter().map(|m| m.x_marginal().map(|g| g.mean.clone())).collect::<Result<_>>()?;
    let us = msgs.iter().map(|m| m.u_marginal().map(|g| g.mean.clone())).collect::<Result<_>>()?;
    Ok((xs, us))
}

/// Start-state prior and one input prior per timestep `0..=T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Priors {
    pub x0: GaussianMoment,
    pub inputs: Vec<GaussianMoment>,
}

impl Priors {
    pub fn new(x0: GaussianMoment, inputs: Vec<GaussianMoment>) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::Invalid("need at least one input prior".into()));
        }
        let m = inputs[0].dim();
        for (t, u) in inputs.iter().enumerate() {
            if u.dim() != m {
                return Err(Error::dim("Priors", format!("input prior {t} has dimension {}", u.dim())));
            }
            if u.cov.clone().cholesky().is_none() {
                return Err(Error::Invalid(format!("input prior covariance at t = {t} is not positive definite")));
            }
        }
        Ok(Self { x0, inputs })
    }

    /// `x0 ~ N(x0, x0_var·I)`, `u_t ~ N(0, u_var·I)` for `t = 0..=T`.
    pub fn isotropic(x0: Vector, x0_var: f64, input_dim: usize, u_var: f64, horizon: usize) -> Result<Self> {
        let u = GaussianMoment::isotropic(Vector::zeros(input_dim), u_var);
        Self::new(GaussianMoment::isotropic(x0, x0_var), vec![u; horizon + 1])
    }

    pub fn horizon(&self) -> usize {
        self.inputs.len() - 1
    }
}

/// How the final state is tied to the goal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TerminalMode {
    /// The final step's cost observation is the terminal cost.
    QfEqualsQ,
    /// The terminal marginal is the forward message with covariance shrunk by `kappa`.
    KappaScale { kappa: f64 },
}

/// Where dynamics and features are linearized in each forward sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Linearization {
    /// At the filtered state and the input prior mean, as the sweep proceeds.
    Forward,
    /// At the previous iteration's marginal means.
    PreviousMarginal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    pub alpha_init: f64,
    /// Ratio bound: `α_{i+1} ≤ α_i / delta_alpha_inv`.
    pub delta_alpha_inv: f64,
    pub terminal_mode: TerminalMode,
    pub max_iters: usize,
    /// Relative predicted-cost change treated as converged; `0` disables the test.
    pub convergence_tol: f64,
    /// Consecutive iterations below `convergence_tol` required to stop.
    pub patience: usize,
    pub seed: u64,
    /// Standard deviation of a seeded perturbation added to the initial input
    /// prior means. Breaks the symmetry of starts at an equilibrium.
    pub input_jitter: f64,
    pub linearization: Linearization,
    /// When false, `α` stays at `alpha_init`.
    pub update_alpha: bool,
    /// Keep every iteration's messages in the result.
    pub keep_history: bool,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            alpha_init: 1.0,
            delta_alpha_inv: 1.0,
            terminal_mode: TerminalMode::QfEqualsQ,
            max_iters: 100,
            convergence_tol: 1e-6,
            patience: 3,
            seed: 0,
            input_jitter: 0.0,
            linearization: Linearization::Forward,
            update_alpha: true,
            keep_history: false,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.alpha_init.is_finite() || self.alpha_init <= 0.0 {
            return Err(Error::Invalid(format!("alpha_init must be positive, got {}", self.alpha_init)));
        }
        if !(self.delta_alpha_inv > 0.0 && self.delta_alpha_inv <= 1.0) {
            return Err(Error::Invalid(format!("delta_alpha_inv must lie in (0, 1], got {}", self.delta_alpha_inv)));
        }
        if let TerminalMode::KappaScale { kappa } = self.terminal_mode {
            if kappa.is_nan() || kappa <= 1.0 {
                return Err(Error::Invalid(format!("kappa must exceed 1, got {kappa}")));
            }
        }
        if self.convergence_tol.is_nan() || self.convergence_tol < 0.0 {
            return Err(Error::Invalid("convergence_tol must be non-negative".into()));
        }
        if !self.input_jitter.is_finite() || self.input_jitter < 0.0 {
            return Err(Error::Invalid(format!("input_jitter must be non-negative, got {}", self.input_jitter)));
        }
        if self.patience == 0 {
            return Err(Error::Invalid("patience must be at least 1".into()));
        }
        Ok(())
    }
}
