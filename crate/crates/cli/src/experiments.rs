//! The three experiment families. Each returns its results in memory; see
//! [`crate::artifacts`] for the files they produce.

use i2c_core::controller::LinearGaussianController;
use i2c_core::engine::{em_iterate, marginal_means, EmResult, EnvProblem};
use i2c_core::linalg::{Mat, Vector};
use i2c_core::lqr::{solve_lqr, LqrCost};
use i2c_core::models::{linearize_dynamics, Environment};
use i2c_core::sim::{monte_carlo_eval_with, rollout_with, trial_rng, EvalReport, RolloutOptions};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};

/// Largest relative gain error over `t < T`, measured per step against the
/// largest LQR entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainDiff {
    pub horizon: usize,
    pub alpha: f64,
    pub max_rel_err_feedback: f64,
    pub max_rel_err_feedforward: f64,
    pub max_rel_err: f64,
    pub worst_t: usize,
    pub rel_err: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LqrEquivOutcome {
    pub lqr: LinearGaussianController,
    pub i2c: LinearGaussianController,
    pub diff: GainDiff,
}

fn rel(a: &Mat, b: &Mat) -> f64 {
    let scale = b.amax();
    let err = (a - b).amax();
    if scale > 0.0 {
        err / scale
    } else {
        err
    }
}

pub fn gain_diff(i2c: &LinearGaussianController, lqr: &LinearGaussianController, alpha: f64) -> GainDiff {
    let horizon = lqr.len();
    let mut out = GainDiff {
        horizon,
        alpha,
        max_rel_err_feedback: 0.0,
        max_rel_err_feedforward: 0.0,
        max_rel_err: 0.0,
        worst_t: 0,
        rel_err: Vec::new(),
    };
    for t in 0..horizon {
        let (a, b) = (&i2c.steps[t], &lqr.steps[t]);
        let fb = rel(&a.K, &b.K);
        let ff = rel(&Mat::from_column_slice(a.k.len(), 1, a.k.as_slice()), &Mat::from_column_slice(b.k.len(), 1, b.k.as_slice()));
        out.max_rel_err_feedback = out.max_rel_err_feedback.max(fb);
        out.max_rel_err_feedforward = out.max_rel_err_feedforward.max(ff);
        let e = fb.max(ff);
        if e > out.max_rel_err {
            out.max_rel_err = e;
            out.worst_t = t;
        }
        out.rel_err.push(e);
    }
    out
}

/// Gains of one i2c E-step against dynamic-programming LQR on the linear
/// test system.
pub fn lqr_equiv(config: &ExperimentConfig) -> CliResult<LqrEquivOutcome> {
    let env = config.environment()?;
    let model = config.observation_model(env.as_ref())?;
    let priors = config.priors(env.as_ref())?;
    let (n, m) = (env.state_dim(), env.input_dim());
    let horizon = env.horizon();

    let x0 = env.initial_state();
    let dynamics = linearize_dynamics(env.as_ref(), &x0, &Vector::zeros(m)).map_err(CliError::Numerical)?;
    let w = &model.weight;
    let cost = LqrCost {
        Q: w.view((0, 0), (n, n)).into_owned(),
        R: w.view((n, n), (m, m)).into_owned(),
        Qf: model.weight_at(true).view((0, 0), (n, n)).into_owned(),
        x_goal: model.target.rows(0, n).into_owned(),
        u_goal: model.target.rows(n, m).into_owned(),
    };
    let (lqr, _) = solve_lqr(&[dynamics], &cost, horizon).map_err(CliError::Numerical)?;

    let mut problem = EnvProblem::new(env.as_ref());
    problem.model = model;
    let result = em_iterate(&problem, &priors, &config.em_config()).map_err(CliError::Numerical)?;
    let mut i2c = result.controller;
    i2c.steps.truncate(horizon);
    let diff = gain_diff(&i2c, &lqr, config.em.alpha_init);
    Ok(LqrEquivOutcome { lqr, i2c, diff })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajoptStatus {
    pub status: String,
    pub iterations: usize,
    pub alpha: Option<f64>,
    pub predicted_cost: Option<f64>,
    pub error: Option<String>,
    pub failed_iteration: Option<usize>,
}

/// Planned trajectory: `T + 1` states and inputs with their cost terms.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<Vector>,
    pub inputs: Vec<Vector>,
    pub costs: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TrajoptOutcome {
    pub result: EmResult,
    pub trajectory: Trajectory,
    pub status: TrajoptStatus,
}

#[derive(Debug, Clone)]
pub enum TrajoptRun {
    Finished(Box<TrajoptOutcome>),
    /// EM stopped with a numerical error.
    Failed {
        status: TrajoptStatus,
        error: i2c_core::Error,
    },
}

/// EM trajectory optimization. Configuration problems are errors; a failed EM
/// run is reported through [`TrajoptRun::Failed`].
pub fn trajopt(config: &ExperimentConfig) -> CliResult<TrajoptRun> {
    let env = config.environment()?;
    let model = config.observation_model(env.as_ref())?;
    let priors = config.priors(env.as_ref())?;
    let mut problem = EnvProblem::new(env.as_ref());
    problem.model = model.clone();

    let result = match em_iterate(&problem, &priors, &config.em_config()) {
        Ok(r) => r,
        Err(e) => {
            let status = TrajoptStatus {
                status: "failed".into(),
                iterations: e.iteration().unwrap_or(0),
                alpha: None,
                predicted_cost: None,
                error: Some(e.to_string()),
                failed_iteration: e.iteration(),
            };
            return Ok(TrajoptRun::Failed { status, error: e });
        }
    };

    let (states, inputs) = match &result.messages {
        Some(msgs) => marginal_means(msgs).map_err(CliError::Numerical)?,
        None => {
            let quiet = RolloutOptions::default();
            let r = rollout_with(env.as_ref(), &result.controller, &env.initial_state(), quiet, &mut trial_rng(config.seed, 0))
                .map_err(CliError::Numerical)?;
            (r.states, r.inputs)
        }
    };
    let last = states.len() - 1;
    let costs = states.iter().zip(&inputs).enumerate().map(|(t, (x, u))| model.step_cost(x, u, t == last)).collect();
    let status = TrajoptStatus {
        status: if result.converged { "converged" } else { "max_iters" }.into(),
        iterations: result.trace.len(),
        alpha: Some(result.alpha),
        predicted_cost: result.trace.last().map(|r| r.predicted_cost),
        error: None,
        failed_iteration: None,
    };
    Ok(TrajoptRun::Finished(Box::new(TrajoptOutcome { result, trajectory: Trajectory { states, inputs, costs }, status })))
}

/// Monte-Carlo evaluation of a stored controller.
pub fn eval(config: &ExperimentConfig, controller: &LinearGaussianController, predicted_cost: Option<f64>) -> CliResult<EvalReport> {
    let env = config.environment()?;
    check_controller(env.as_ref(), controller)?;
    let mut report = monte_carlo_eval_with(env.as_ref(), controller, config.eval.trials, config.seed, config.rollout_options())
        .map_err(|e| if e.is_divergence() { CliError::Divergence(e) } else { CliError::Numerical(e) })?;
    report.predicted_cost = predicted_cost;
    Ok(report)
}

fn check_controller(env: &dyn Environment, controller: &LinearGaussianController) -> CliResult<()> {
    let h = env.horizon();
    if controller.state_dim() != env.state_dim() || controller.input_dim() != env.input_dim() || !(h..=h + 1).contains(&controller.len()) {
        return Err(CliError::config(format!(
            "controller with {} steps of {}x{} gains does not fit {} ({} states, {} inputs, horizon {h})",
            controller.len(),
            controller.input_dim(),
            controller.state_dim(),
            env.name(),
            env.state_dim(),
            env.input_dim(),
        )));
    }
    Ok(())
}
