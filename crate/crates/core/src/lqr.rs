//! Finite-horizon discrete-time LQR by dynamic programming.

use serde::{Deserialize, Serialize};

use crate::controller::{ControllerStep, LinearGaussianController};
use crate::error::{Error, Result};
use crate::linalg::{symmetrize, Mat, Vector};
use crate::models::LinearDynamics;

/// `V_t(x) = xᵀP_t x + 2xᵀp_t + c_t` for `t = 0..=T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticValue {
    pub P: Vec<Mat>,
    pub p: Vec<Vector>,
    pub constant: Vec<f64>,
}

impl QuadraticValue {
    pub fn value(&self, t: usize, x: &Vector) -> f64 {
        (x.transpose() * &self.P[t] * x)[(0, 0)] + 2.0 * x.dot(&self.p[t]) + self.constant[t]
    }
}

/// Quadratic tracking cost for [`solve_lqr`].
#[derive(Debug, Clone, PartialEq)]
pub struct LqrCost {
    pub Q: Mat,
    pub R: Mat,
    pub Qf: Mat,
    pub x_goal: Vector,
    pub u_goal: Vector,
}

fn dynamics_at(dynamics: &[LinearDynamics], t: usize) -> &LinearDynamics {
    if dynamics.len() == 1 {
        &dynamics[0]
    } else {
        &dynamics[t]
    }
}

fn check(dynamics: &[LinearDynamics], cost: &LqrCost, horizon: usize) -> Result<()> {
    if horizon == 0 {
        return Err(Error::Invalid("horizon must be at least 1".into()));
    }
    if dynamics.len() != 1 && dynamics.len() != horizon {
        return Err(Error::dim("solve_lqr", format!("{} dynamics for horizon {horizon}", dynamics.len())));
    }
    let (n, m) = (dynamics[0].state_dim(), dynamics[0].input_dim());
    if cost.Q.shape() != (n, n) || cost.Qf.shape() != (n, n) || cost.R.shape() != (m, m) || cost.x_goal.len() != n || cost.u_goal.len() != m
    {
        return Err(Error::dim("solve_lqr cost", format!("state {n}, input {m}")));
    }
    if dynamics.iter().any(|d| d.state_dim() != n || d.input_dim() != m) {
        return Err(Error::dim("solve_lqr", "time-varying dynamics change dimension"));
    }
    Ok(())
}

/// Backward Riccati recursion from `P_T = Q_f`, `p_T = −Q_f x_g`.
///
/// Stage cost `(x−x_g)ᵀQ(x−x_g) + (u−u_g)ᵀR(u−u_g)` for `t < T`, terminal
/// `(x_T−x_g)ᵀQ_f(x_T−x_g)`. `dynamics` holds one model or one per step.
pub fn solve_lqr(dynamics: &[LinearDynamics], cost: &LqrCost, horizon: usize) -> Result<(LinearGaussianController, QuadraticValue)> {
    check(dynamics, cost, horizon)?;
    let LqrCost { Q, R, Qf, x_goal, u_goal } = cost;
    let m = R.nrows();
    let mut P = symmetrize(Qf);
    let mut p = -(Qf * x_goal);
    let mut c = (x_goal.transpose() * Qf * x_goal)[(0, 0)];
    let stage_const = (x_goal.transpose() * Q * x_goal)[(0, 0)] + (u_goal.transpose() * R * u_goal)[(0, 0)];

    let mut steps = Vec::with_capacity(horizon);
    let mut value = QuadraticValue { P: vec![P.clone()], p: vec![p.clone()], constant: vec![c] };
    for t in (0..horizon).rev() {
        let LinearDynamics { A, B, a, .. } = dynamics_at(dynamics, t);
        let H = symmetrize(&(R + B.transpose() * &P * B));
        let chol = H.clone().cholesky().ok_or_else(|| Error::Singular(format!("R + BᵀPB at t = {t}")))?;
        let h = B.transpose() * (&P * a + &p) - R * u_goal;
        let K = -chol.solve(&(B.transpose() * &P * A));
        let k = -chol.solve(&h);
        c += (a.transpose() * &P * a)[(0, 0)] + 2.0 * a.dot(&p) + stage_const - h.dot(&chol.solve(&h));
        p = A.transpose() * (&P * a + &p + &P * B * &k) - Q * x_goal;
        P = symmetrize(&(Q + A.transpose() * &P * (A + B * &K)));
        steps.push(ControllerStep { K, k, cov: Mat::zeros(m, m) });
        value.P.push(P.clone());
        value.p.push(p.clone());
        value.constant.push(c);
    }
    steps.reverse();
    value.P.reverse();
    value.p.reverse();
    value.constant.reverse();
    Ok((LinearGaussianController { steps }, value))
}

/// Deterministic rollout of `u_t = K_t x_t + k_t` for `t < T`.
pub fn lqr_rollout(
    dynamics: &[LinearDynamics],
    controller: &LinearGaussianController,
    x0: &Vector,
    horizon: usize,
) -> Result<(Vec<Vector>, Vec<Vector>)> {
    if controller.steps.len() < horizon || (dynamics.len() != 1 && dynamics.len() < horizon) || dynamics.is_empty() {
        return Err(Error::dim(
            "lqr_rollout",
            format!("controller {} / dynamics {} for horizon {horizon}", controller.steps.len(), dynamics.len()),
        ));
    }
    if x0.len() != dynamics[0].state_dim() {
        return Err(Error::dim("lqr_rollout", format!("x0 has {} entries", x0.len())));
    }
    let mut xs = vec![x0.clone()];
    let mut us = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let u = controller.steps[t].mean(&xs[t]);
        xs.push(dynamics_at(dynamics, t).mean_step(&xs[t], &u));
        us.push(u);
    }
    Ok((xs, us))
}

/// Cost of a trajectory under the LQR objective.
pub fn lqr_cost(cost: &LqrCost, xs: &[Vector], us: &[Vector]) -> f64 {
    let quad = |M: &Mat, v: &Vector| (v.transpose() * M * v)[(0, 0)];
    let mut total = 0.0;
    for (x, u) in xs.iter().zip(us) {
        total += quad(&cost.Q, &(x - &cost.x_goal)) + quad(&cost.R, &(u - &cost.u_goal));
    }
    total + quad(&cost.Qf, &(xs[us.len()].clone() - &cost.x_goal))
}
