use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Mat, Vector};
use crate::models::{
    env_step, linearize_dynamics, linearize_observation, linearize_terminal_observation, trajectory_cost, Environment, LinearDynamics,
    LinearizedObservation, ObservationModel,
};

/// A finite-horizon problem the engine can linearize.
pub trait Problem: Sync {
    fn horizon(&self) -> usize;
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn dynamics(&self, t: usize, x: &Vector, u: &Vector) -> Result<LinearDynamics>;
    fn observation(&self, t: usize, x: &Vector, u: &Vector, alpha: f64) -> Result<LinearizedObservation>;
    /// Mean next state.
    fn step_mean(&self, t: usize, x: &Vector, u: &Vector) -> Result<Vector>;
    /// Cost of a trajectory with `T + 1` states and inputs.
    fn cost(&self, xs: &[Vector], us: &[Vector]) -> Result<f64>;
}

/// Affine cost observation `z = E x + F u + e` with weight `Θ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationTerm {
    pub E: Mat,
    pub F: Mat,
    pub e: Vector,
    pub target: Vector,
    pub weight: Mat,
}

impl ObservationTerm {
    fn cost(&self, x: &Vector, u: &Vector) -> f64 {
        let r = &self.E * x + &self.F * u + &self.e - &self.target;
        (r.transpose() * &self.weight * &r)[(0, 0)]
    }
}

/// Linear Gaussian problem given directly by its matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearProblem {
    /// One model for all steps, or one per step `0..T`.
    pub dynamics: Vec<LinearDynamics>,
    /// One term per step `0..=T`.
    pub observations: Vec<ObservationTerm>,
}

impl LinearProblem {
    pub fn new(dynamics: Vec<LinearDynamics>, observations: Vec<ObservationTerm>) -> Result<Self> {
        if observations.len() < 2 || dynamics.is_empty() {
            return Err(Error::Invalid("need a horizon of at least one step".into()));
        }
        let horizon = observations.len() - 1;
        if dynamics.len() != 1 && dynamics.len() != horizon {
            return Err(Error::dim("LinearProblem", format!("{} dynamics for horizon {horizon}", dynamics.len())));
        }
        let (n, m) = (dynamics[0].state_dim(), dynamics[0].input_dim());
        for o in &observations {
            let d = o.E.nrows();
            if o.E.ncols() != n || o.F.shape() != (d, m) || o.e.len() != d || o.target.len() != d || o.weight.shape() != (d, d) {
                return Err(Error::dim("LinearProblem observation", format!("state {n}, input {m}")));
            }
        }
        Ok(Self { dynamics, observations })
    }

    fn model(&self, t: usize) -> &LinearDynamics {
        if self.dynamics.len() == 1 {
            &self.dynamics[0]
        } else {
            &self.dynamics[t]
        }
    }
}

impl Problem for LinearProblem {
    fn horizon(&self) -> usize {
        self.observations.len() - 1
    }

    fn state_dim(&self) -> usize {
        self.dynamics[0].state_dim()
    }

    fn input_dim(&self) -> usize {
        self.dynamics[0].input_dim()
    }

    fn dynamics(&self, t: usize, _x: &Vector, _u: &Vector) -> Result<LinearDynamics> {
        Ok(self.model(t).clone())
    }

    fn observation(&self, t: usize, _x: &Vector, _u: &Vector, alpha: f64) -> Result<LinearizedObservation> {
        let o = &self.observations[t];
        LinearizedObservation::new(o.E.clone(), o.F.clone(), o.e.clone(), o.target.clone(), o.weight.clone(), alpha)
    }

    fn step_mean(&self, t: usize, x: &Vector, u: &Vector) -> Result<Vector> {
        Ok(self.model(t).mean_step(x, u))
    }

    fn cost(&self, xs: &[Vector], us: &[Vector]) -> Result<f64> {
        if xs.len() != self.observations.len() || us.len() != xs.len() {
            return Err(Error::dim("LinearProblem::cost", format!("{} states, {} inputs", xs.len(), us.len())));
        }
        Ok(self.observations.iter().zip(xs.iter().zip(us)).map(|(o, (x, u))| o.cost(x, u)).sum())
    }
}

/// A registered environment with its feature cost.
pub struct EnvProblem<'a> {
    pub env: &'a dyn Environment,
    pub model: ObservationModel,
    pub horizon: usize,
}

impl<'a> EnvProblem<'a> {
    pub fn new(env: &'a dyn Environment) -> Self {
        Self { env, model: env.observation_model(), horizon: env.horizon() }
    }
}

impl Problem for EnvProblem<'_> {
    fn horizon(&self) -> usize {
        self.horizon
    }

    fn state_dim(&self) -> usize {
        self.env.state_dim()
    }

    fn input_dim(&self) -> usize {
        self.env.input_dim()
    }

    fn dynamics(&self, _t: usize, x: &Vector, u: &Vector) -> Result<LinearDynamics> {
        linearize_dynamics(self.env, x, u)
    }

    fn observation(&self, t: usize, x: &Vector, u: &Vector, alpha: f64) -> Result<LinearizedObservation> {
        if t == self.horizon {
            linearize_terminal_observation(&self.model, alpha, x, u)
        } else {
            linearize_observation(&self.model, alpha, x, u)
        }
    }

    fn step_mean(&self, _t: usize, x: &Vector, u: &Vector) -> Result<Vector> {
        env_step(self.env, x, u, None)
    }

    fn cost(&self, xs: &[Vector], us: &[Vector]) -> Result<f64> {
        trajectory_cost(&self.model, xs, us)
    }
}
