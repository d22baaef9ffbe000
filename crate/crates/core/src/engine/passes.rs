use super::{MessageState, Priors, Problem, TerminalMode};
use crate::error::{Error, Result};
use crate::gaussian::{
    add_bwd, add_fwd, auxiliary_of, auxiliary_transform_bwd, equality_fuse, fuse_marginal, linear_transform_bwd, linear_transform_fwd,
    marginal_from_auxiliary, GaussianCanonical, GaussianMoment,
};
use crate::linalg::{is_finite, is_finite_vec, spd_inverse, Vector};

/// Fixed linearization points `(x_t, u_t)` for `t = 0..=T`; `None` linearizes
/// along the forward sweep.
pub type LinearizationPoints<'a> = Option<&'a [(Vector, Vector)]>;

/// Observation message into one variable of the cost factor, the other one
/// integrated out: `(Gᵀ S⁻¹ r, Gᵀ S⁻¹ G)` with `S = Σ_ξ + H Σ_o Hᵀ`.
fn observation_message(
    g: &crate::linalg::Mat,
    noise_cov: &crate::linalg::Mat,
    residual: &Vector,
    h: &crate::linalg::Mat,
    other: &GaussianMoment,
    edge: &str,
) -> Result<GaussianCanonical> {
    let s = noise_cov + h * &other.cov * h.transpose();
    let prec = spd_inverse(&s, edge)?;
    Ok(GaussianCanonical::raw(g.transpose() * &prec * residual, g.transpose() * &prec * g))
}

fn step_forward(
    problem: &dyn Problem,
    t: usize,
    x_fwd: GaussianMoment,
    u_prior: &GaussianMoment,
    alpha: f64,
    points: LinearizationPoints,
) -> Result<MessageState> {
    let horizon = problem.horizon();
    let (ox, ou) = match points {
        Some(p) => (p[t].0.clone(), p[t].1.clone()),
        None => (x_fwd.mean.clone(), u_prior.mean.clone()),
    };
    let obs = problem.observation(t, &ox, &ou, alpha)?;

    let u_residual = &obs.target - &obs.E * &x_fwd.mean - &obs.e;
    let u_obs = observation_message(&obs.F, &obs.noise_cov, &u_residual, &obs.E, &x_fwd, "input innovation Σ_ξ + EΣEᵀ")?;
    let u_innov = fuse_marginal(u_prior, &u_obs)?;

    let x_residual = &obs.target - &obs.F * &u_prior.mean - &obs.e;
    let x_obs = observation_message(&obs.E, &obs.noise_cov, &x_residual, &obs.F, u_prior, "state innovation Σ_ξ + FΣFᵀ")?;
    let x_innov = fuse_marginal(&x_fwd, &x_obs)?;

    let mut msg = MessageState {
        dynamics: None,
        observation: obs,
        x_fwd,
        u_prior: u_prior.clone(),
        x_obs,
        u_obs,
        x_innov,
        u_innov,
        x_prop: None,
        x_noisy: None,
        u_prop: None,
        x_bwd: None,
        x_noisy_bwd: None,
        x_aux: None,
        x_marg: None,
        u_marg: None,
    };
    if t < horizon {
        let (dx, du) = match points {
            Some(p) => (p[t].0.clone(), p[t].1.clone()),
            None => (msg.x_innov.mean.clone(), u_prior.mean.clone()),
        };
        let dynamics = problem.dynamics(t, &dx, &du)?;
        let x_prop = add_fwd(&linear_transform_fwd(&dynamics.A, &msg.x_innov)?, &GaussianMoment::deterministic(dynamics.a.clone()))?;
        let noise = GaussianMoment::raw(Vector::zeros(dynamics.state_dim()), dynamics.noise_cov.clone());
        msg.x_noisy = Some(add_fwd(&x_prop, &noise)?);
        msg.x_prop = Some(x_prop);
        msg.u_prop = Some(linear_transform_fwd(&dynamics.B, &msg.u_innov)?);
        msg.dynamics = Some(dynamics);
    }
    Ok(msg)
}

/// Filtering sweep: observation innovations of `U_t` and `X_t`, then
/// propagation through the dynamics to the prior of `X_{t+1}`.
pub fn forward_pass(problem: &dyn Problem, priors: &Priors, alpha: f64, points: LinearizationPoints) -> Result<Vec<MessageState>> {
    let horizon = problem.horizon();
    if priors.inputs.len() != horizon + 1 {
        return Err(Error::dim("forward_pass", format!("{} input priors for horizon {horizon}", priors.inputs.len())));
    }
    if priors.x0.dim() != problem.state_dim() || priors.inputs[0].dim() != problem.input_dim() {
        return Err(Error::dim("forward_pass", "prior dimensions do not match the problem"));
    }
    if let Some(p) = points {
        if p.len() != horizon + 1 {
            return Err(Error::dim("forward_pass", format!("{} linearization points for horizon {horizon}", p.len())));
        }
    }
    let mut msgs: Vec<MessageState> = Vec::with_capacity(horizon + 1);
    let mut x_fwd = priors.x0.clone();
    for t in 0..=horizon {
        let msg = step_forward(problem, t, x_fwd, &priors.inputs[t], alpha, points).map_err(|e| e.at_timestep(t))?;
        if t < horizon {
            let next = add_fwd(msg.x_noisy.as_ref().unwrap(), msg.u_prop.as_ref().unwrap())?;
            if !is_finite_vec(&next.mean) || !is_finite(&next.cov) {
                return Err(Error::NonFinite("forward state message".into()).at_timestep(t + 1));
            }
            x_fwd = next;
        } else {
            x_fwd = msg.x_fwd.clone();
        }
        msgs.push(msg);
    }
    Ok(msgs)
}

fn terminal(msg: &mut MessageState, mode: TerminalMode) -> Result<()> {
    match mode {
        TerminalMode::QfEqualsQ => {
            msg.x_marg = Some(msg.x_innov.clone());
            msg.x_bwd = Some(msg.x_obs.clone());
        }
        TerminalMode::KappaScale { kappa } => {
            let fwd = &msg.x_fwd;
            msg.x_marg = Some(GaussianMoment::raw(fwd.mean.clone(), &fwd.cov / kappa));
            let prec = spd_inverse(&fwd.cov, "terminal forward covariance")? * (kappa - 1.0);
            msg.x_bwd = Some(GaussianCanonical::raw(&prec * &fwd.mean, prec));
        }
    }
    msg.u_marg = Some(msg.u_innov.clone());
    Ok(())
}

fn step_backward(msg: &mut MessageState, next: &mut MessageState) -> Result<()> {
    let dynamics = msg.dynamics.as_ref().ok_or_else(|| Error::Invalid("missing dynamics".into()))?;
    let next_marg = next.x_marginal()?;
    let aux = auxiliary_of(&next.x_fwd, next_marg)?;

    // The auxiliary form passes unchanged through sum nodes, so it holds on
    // X‴ and U″ as well and maps back through A and B.
    let x_aux = auxiliary_transform_bwd(&dynamics.A, &aux)?;
    let u_aux = auxiliary_transform_bwd(&dynamics.B, &aux)?;
    msg.x_marg = Some(marginal_from_auxiliary(&msg.x_innov, &x_aux)?);
    msg.u_marg = Some(marginal_from_auxiliary(&msg.u_innov, &u_aux)?);
    next.x_aux = Some(aux);

    let next_bwd = next.backward()?;
    let x_noisy_bwd = add_bwd(next_bwd, msg.u_prop.as_ref().unwrap())?;
    let noise = GaussianMoment::raw(Vector::zeros(dynamics.state_dim()), dynamics.noise_cov.clone());
    let x_prop_bwd = add_bwd(&x_noisy_bwd, &noise)?;
    let x_lin_bwd = add_bwd(&x_prop_bwd, &GaussianMoment::deterministic(dynamics.a.clone()))?;
    let x_innov_bwd = linear_transform_bwd(&dynamics.A, &x_lin_bwd)?;
    msg.x_bwd = Some(equality_fuse(&x_innov_bwd, &msg.x_obs)?);
    msg.x_noisy_bwd = Some(x_noisy_bwd);
    Ok(())
}

/// Smoothing sweep from `T` down to `0`: marginals through the auxiliary
/// form, and canonical backward messages on every `X_t`.
pub fn backward_pass(msgs: &mut [MessageState], mode: TerminalMode) -> Result<()> {
    let horizon = msgs.len().checked_sub(1).ok_or_else(|| Error::Invalid("empty message state".into()))?;
    terminal(&mut msgs[horizon], mode).map_err(|e| e.at_timestep(horizon))?;
    for t in (0..horizon).rev() {
        let (head, tail) = msgs.split_at_mut(t + 1);
        step_backward(&mut head[t], &mut tail[0]).map_err(|e| e.at_timestep(t))?;
    }
    Ok(())
}
