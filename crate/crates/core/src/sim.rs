//! Closed-loop rollouts and Monte-Carlo cost evaluation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::controller::LinearGaussianController;
use crate::error::{Error, Result};
use crate::linalg::{psd_sqrt, Mat, Vector};
use crate::models::{clip_input, env_step, step_costs, Environment};

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    /// `T + 1` states.
    pub states: Vec<Vector>,
    /// `T + 1` applied (clipped) inputs.
    pub inputs: Vec<Vector>,
    /// Per-step cost terms.
    pub step_costs: Vec<f64>,
    pub cost: f64,
}

/// Rollout options beyond the process-noise flag.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RolloutOptions {
    /// Add process noise drawn from the environment covariance.
    pub process_noise: bool,
    /// Sample inputs from `N(Kx + k, Σ_k)` instead of using the mean.
    pub sample_inputs: bool,
}

fn gaussian(rng: &mut ChaCha8Rng, root: &Mat) -> Vector {
    let xi = Vector::from_fn(root.ncols(), |_, _| StandardNormal.sample(rng));
    root * xi
}

/// Apply `u_t = clip(K_t x_t + k_t)` from `x0` over the environment horizon.
///
/// A controller with `T` steps leaves the final input at zero.
pub fn rollout(
    env: &dyn Environment,
    controller: &LinearGaussianController,
    x0: &Vector,
    stochastic: bool,
    rng: &mut ChaCha8Rng,
) -> Result<Rollout> {
    rollout_with(env, controller, x0, RolloutOptions { process_noise: stochastic, sample_inputs: false }, rng)
}

pub fn rollout_with(
    env: &dyn Environment,
    controller: &LinearGaussianController,
    x0: &Vector,
    options: RolloutOptions,
    rng: &mut ChaCha8Rng,
) -> Result<Rollout> {
    let horizon = env.horizon();
    if controller.len() != horizon + 1 && controller.len() != horizon {
        return Err(Error::dim("rollout", format!("controller has {} steps for horizon {horizon}", controller.len())));
    }
    if controller.state_dim() != env.state_dim() || controller.input_dim() != env.input_dim() || x0.len() != env.state_dim() {
        return Err(Error::dim(
            "rollout",
            format!(
                "controller {}x{} for environment {}x{}",
                controller.input_dim(),
                controller.state_dim(),
                env.input_dim(),
                env.state_dim()
            ),
        ));
    }
    let noise_root = psd_sqrt(env.noise_cov());
    let input_roots: Vec<Mat> =
        if options.sample_inputs { controller.steps.iter().map(|s| psd_sqrt(&s.cov)).collect() } else { Vec::new() };
    let policy = |t: usize, x: &Vector, rng: &mut ChaCha8Rng| -> Vector {
        match controller.steps.get(t) {
            None => Vector::zeros(env.input_dim()),
            Some(step) => {
                let mut u = step.mean(x);
                if options.sample_inputs {
                    u += gaussian(rng, &input_roots[t]);
                }
                clip_input(env, &u)
            }
        }
    };

    let mut states = vec![x0.clone()];
    let mut inputs = Vec::with_capacity(horizon + 1);
    for t in 0..horizon {
        let u = policy(t, &states[t], rng);
        let noise = options.process_noise.then(|| gaussian(rng, &noise_root));
        let next = env_step(env, &states[t], &u, noise.as_ref()).map_err(|e| e.at_timestep(t + 1))?;
        inputs.push(u);
        states.push(next);
    }
    inputs.push(policy(horizon, &states[horizon], rng));
    let step_costs = step_costs(&env.observation_model(), &states, &inputs);
    let cost = step_costs.iter().sum();
    Ok(Rollout { states, inputs, step_costs, cost })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub predicted_cost: Option<f64>,
    pub evaluated_costs: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub n_trials: usize,
    pub seed: u64,
}

impl EvalReport {
    pub fn from_costs(evaluated_costs: Vec<f64>, seed: u64) -> Self {
        let n = evaluated_costs.len();
        let first = evaluated_costs.first().copied().unwrap_or(0.0);
        let mean = first + evaluated_costs.iter().map(|c| c - first).sum::<f64>() / n as f64;
        let var = evaluated_costs.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / n as f64;
        Self { predicted_cost: None, evaluated_costs, mean, std: var.sqrt(), n_trials: n, seed }
    }
}

/// Generator for one trial: the master seed selects the key, the trial index
/// the stream.
pub fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    rng
}

/// Independent noisy rollouts of the mean policy from the environment's start
/// state. Trials run in parallel; results are in trial order.
pub fn monte_carlo_eval(env: &dyn Environment, controller: &LinearGaussianController, n_trials: usize, seed: u64) -> Result<EvalReport> {
    monte_carlo_eval_with(env, controller, n_trials, seed, RolloutOptions { process_noise: true, sample_inputs: false })
}

pub fn monte_carlo_eval_with(
    env: &dyn Environment,
    controller: &LinearGaussianController,
    n_trials: usize,
    seed: u64,
    options: RolloutOptions,
) -> Result<EvalReport> {
    if n_trials == 0 {
        return Err(Error::Invalid("n_trials must be at least 1".into()));
    }
    let x0 = env.initial_state();
    let costs = (0..n_trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = trial_rng(seed, trial);
            rollout_with(env, controller, &x0, options, &mut rng).map(|r| r.cost).map_err(|e| e.at_trial(trial))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(EvalReport::from_costs(costs, seed))
}
