use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{backward_pass, forward_pass, marginal_means, EmConfig, Linearization, MessageState, Priors, Problem};
use crate::controller::{controller_from_priors, extract_controller, LinearGaussianController};
use crate::error::{Error, Result};
use crate::linalg::{Mat, Vector};

/// One row of the convergence trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    /// Cost of the marginal-mean trajectory.
    pub predicted_cost: f64,
    /// `α` used in this iteration's E-step.
    pub alpha: f64,
    pub nll: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlphaUpdate {
    /// Capped value to use next.
    pub alpha: f64,
    /// Unconstrained maximizer `T·d_z / tr(Θ Σ̂_ξ)`.
    pub alpha_star: f64,
    /// `Σ_t tr(Θ_t Σ̂_ξ,t)`.
    pub weighted_trace: f64,
    /// Expected residual second moment summed over `t = 0..=T`.
    pub sigma_xi_hat: Mat,
}

/// Closed-form `α` update from the smoothed marginals, capped at
/// `alpha / delta_alpha_inv`.
pub fn m_step_alpha(msgs: &[MessageState], alpha: f64, delta_alpha_inv: f64) -> Result<AlphaUpdate> {
    if msgs.len() < 2 {
        return Err(Error::Invalid("m-step needs a horizon of at least one step".into()));
    }
    if !(delta_alpha_inv > 0.0 && delta_alpha_inv <= 1.0) {
        return Err(Error::Invalid(format!("delta_alpha_inv must lie in (0, 1], got {delta_alpha_inv}")));
    }
    let horizon = msgs.len() - 1;
    let dz = msgs[0].observation.dim();
    let mut sigma_xi_hat = Mat::zeros(dz, dz);
    let mut weighted_trace = 0.0;
    for m in msgs {
        let (x, u) = (m.x_marginal()?, m.u_marginal()?);
        let o = &m.observation;
        let r = o.residual(&x.mean, &u.mean);
        let s = &r * r.transpose() + &o.E * &x.cov * o.E.transpose() + &o.F * &u.cov * o.F.transpose();
        weighted_trace += (&o.weight * &s).trace();
        sigma_xi_hat += s;
    }
    if !weighted_trace.is_finite() || weighted_trace <= 0.0 {
        return Err(Error::Invalid(format!("tr(Θ Σ̂_ξ) must be positive, got {weighted_trace}")));
    }
    let alpha_star = (horizon * dz) as f64 / weighted_trace;
    Ok(AlphaUpdate { alpha: alpha_star.min(alpha / delta_alpha_inv), alpha_star, weighted_trace, sigma_xi_hat })
}

/// Negative log-likelihood at the marginal means, up to constants.
///
/// Observation residuals, the `α`-dependent normalizer, and the dynamics
/// residuals wherever the process noise is invertible.
pub fn nll_surrogate(msgs: &[MessageState], alpha: f64) -> Result<f64> {
    let horizon = msgs.len().saturating_sub(1);
    let dz = msgs[0].observation.dim();
    let mut nll = 0.0;
    for (t, m) in msgs.iter().enumerate() {
        let (x, u) = (&m.x_marginal()?.mean, &m.u_marginal()?.mean);
        let o = &m.observation;
        let r = o.residual(x, u);
        nll += 0.5 * alpha * (r.transpose() * &o.weight * &r)[(0, 0)];
        if let Some(d) = &m.dynamics {
            if let Some(ch) = d.noise_cov.clone().cholesky() {
                let w = &msgs[t + 1].x_marginal()?.mean - d.mean_step(x, u);
                nll += 0.5 * w.dot(&ch.solve(&w)) + ch.l().diagonal().map(f64::ln).sum();
            }
        }
    }
    let log_det_weight = msgs[0].observation.weight.clone().cholesky().map(|c| 2.0 * c.l().diagonal().map(f64::ln).sum()).unwrap_or(0.0);
    nll -= 0.5 * horizon as f64 * (dz as f64 * alpha.ln() + log_det_weight);
    Ok(nll)
}

#[derive(Debug, Clone)]
pub struct EmResult {
    /// Messages of the last E-step; `None` when no iteration ran.
    pub messages: Option<Vec<MessageState>>,
    pub controller: LinearGaussianController,
    pub trace: Vec<TraceRecord>,
    /// Priors after the last refresh.
    pub priors: Priors,
    /// `α` after the last M-step.
    pub alpha: f64,
    pub converged: bool,
    /// Every iteration's messages when `keep_history` is set.
    pub history: Vec<Vec<MessageState>>,
}

fn prior_rollout(problem: &dyn Problem, priors: &Priors) -> Result<Vec<(Vector, Vector)>> {
    let mut x = priors.x0.mean.clone();
    let mut points = Vec::with_capacity(priors.inputs.len());
    for (t, u) in priors.inputs.iter().enumerate() {
        let next = if t < problem.horizon() { Some(problem.step_mean(t, &x, &u.mean)?) } else { None };
        points.push((x.clone(), u.mean.clone()));
        if let Some(n) = next {
            x = n;
        }
    }
    Ok(points)
}

/// Alternate E-steps (forward and backward sweeps) with the `α` M-step and
/// the input-prior refresh until the predicted cost settles.
pub fn em_iterate(problem: &dyn Problem, priors: &Priors, config: &EmConfig) -> Result<EmResult> {
    config.validate()?;
    let mut priors = priors.clone();
    if config.input_jitter > 0.0 {
        let mut rng = crate::sim::trial_rng(config.seed, 0);
        for u in priors.inputs.iter_mut() {
            for v in u.mean.iter_mut() {
                let n: f64 = StandardNormal.sample(&mut rng);
                *v += config.input_jitter * n;
            }
        }
    }
    let mut alpha = config.alpha_init;
    let mut points = match config.linearization {
        Linearization::Forward => None,
        Linearization::PreviousMarginal => Some(prior_rollout(problem, &priors)?),
    };
    let mut trace = Vec::new();
    let mut history = Vec::new();
    let mut last: Option<Vec<MessageState>> = None;
    let mut converged = false;
    let mut streak = 0;

    for iteration in 0..config.max_iters {
        let step = || -> Result<(Vec<MessageState>, TraceRecord, f64)> {
            let mut msgs = forward_pass(problem, &priors, alpha, points.as_deref())?;
            backward_pass(&mut msgs, config.terminal_mode)?;
            let (xs, us) = marginal_means(&msgs)?;
            let predicted_cost = problem.cost(&xs, &us)?;
            if !predicted_cost.is_finite() {
                return Err(Error::NonFinite("predicted cost".into()));
            }
            let nll = nll_surrogate(&msgs, alpha)?;
            let next_alpha = if config.update_alpha { m_step_alpha(&msgs, alpha, config.delta_alpha_inv)?.alpha } else { alpha };
            Ok((msgs, TraceRecord { iteration, predicted_cost, alpha, nll }, next_alpha))
        };
        let (msgs, record, next_alpha) = step().map_err(|e| e.at_iteration(iteration))?;

        if let Some(prev) = trace.last().map(|r: &TraceRecord| r.predicted_cost) {
            let change = (record.predicted_cost - prev).abs() / prev.abs().max(f64::MIN_POSITIVE);
            streak = if change < config.convergence_tol { streak + 1 } else { 0 };
        }
        trace.push(record);
        alpha = next_alpha;
        for (prior, m) in priors.inputs.iter_mut().zip(&msgs) {
            *prior = m.u_marginal()?.clone();
        }
        if config.linearization == Linearization::PreviousMarginal {
            let (xs, us) = marginal_means(&msgs)?;
            points = Some(xs.into_iter().zip(us).collect());
        }
        if config.keep_history {
            history.push(msgs.clone());
        }
        last = Some(msgs);
        if config.convergence_tol > 0.0 && streak >= config.patience {
            converged = true;
            break;
        }
    }

    let controller = match &last {
        Some(msgs) => extract_controller(msgs)?,
        None => controller_from_priors(&priors, problem.state_dim()),
    };
    Ok(EmResult { messages: last, controller, trace, priors, alpha, converged, history })
}
