use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::dvector;

use super::{diag, eye, Environment, FeatureMap, LinearDynamics, ObservationModel, TrigFeatures};
use crate::error::{Error, Result};
use crate::linalg::{solve_vec, Mat, Vector};

/// Second-order mechanical system `q̈ = accel(q, q̇, u)`.
pub trait Mechanism: Send + Sync {
    fn dof(&self) -> usize;
    fn accel(&self, q: &Vector, v: &Vector, u: &Vector) -> Vector;
    /// `(∂q̈/∂q, ∂q̈/∂q̇, ∂q̈/∂u)` when implemented analytically.
    fn accel_jacobian(&self, _q: &Vector, _v: &Vector, _u: &Vector) -> Option<(Mat, Mat, Mat)> {
        None
    }
}

/// Uniform rod on a pivot, `θ = 0` upright.
#[derive(Debug, Clone, PartialEq)]
pub struct Pendulum {
    pub mass: f64,
    pub length: f64,
    pub gravity: f64,
    pub damping: f64,
}

impl Default for Pendulum {
    fn default() -> Self {
        Self { mass: 1.0, length: 1.0, gravity: 9.81, damping: 0.05 }
    }
}

impl Pendulum {
    fn inertia(&self) -> f64 {
        self.mass * self.length * self.length / 3.0
    }
}

impl Mechanism for Pendulum {
    fn dof(&self) -> usize {
        1
    }

    fn accel(&self, q: &Vector, v: &Vector, u: &Vector) -> Vector {
        let grav = 1.5 * self.gravity / self.length;
        dvector![grav * q[0].sin() + (u[0] - self.damping * v[0]) / self.inertia()]
    }

    fn accel_jacobian(&self, q: &Vector, _v: &Vector, _u: &Vector) -> Option<(Mat, Mat, Mat)> {
        let grav = 1.5 * self.gravity / self.length;
        let j = self.inertia();
        Some((Mat::from_element(1, 1, grav * q[0].cos()), Mat::from_element(1, 1, -self.damping / j), Mat::from_element(1, 1, 1.0 / j)))
    }
}

/// Cart with a uniform pole of half-length `half_length`, `θ = 0` upright.
#[derive(Debug, Clone, PartialEq)]
pub struct Cartpole {
    pub cart_mass: f64,
    pub pole_mass: f64,
    pub half_length: f64,
    pub gravity: f64,
}

impl Default for Cartpole {
    fn default() -> Self {
        Self { cart_mass: 1.0, pole_mass: 0.5, half_length: 0.5, gravity: 9.81 }
    }
}

impl Mechanism for Cartpole {
    fn dof(&self) -> usize {
        2
    }

    fn accel(&self, q: &Vector, v: &Vector, u: &Vector) -> Vector {
        let (s, c) = q[1].sin_cos();
        let w = v[1];
        let total = self.cart_mass + self.pole_mass;
        let pml = self.pole_mass * self.half_length;
        let temp = (u[0] + pml * w * w * s) / total;
        let den = self.half_length * (4.0 / 3.0 - self.pole_mass * c * c / total);
        let theta_acc = (self.gravity * s - c * temp) / den;
        let x_acc = temp - pml * theta_acc * c / total;
        dvector![x_acc, theta_acc]
    }

    fn accel_jacobian(&self, q: &Vector, v: &Vector, u: &Vector) -> Option<(Mat, Mat, Mat)> {
        let (s, c) = q[1].sin_cos();
        let w = v[1];
        let total = self.cart_mass + self.pole_mass;
        let pml = self.pole_mass * self.half_length;
        let temp = (u[0] + pml * w * w * s) / total;
        let temp_th = pml * w * w * c / total;
        let temp_w = 2.0 * pml * w * s / total;
        let temp_u = 1.0 / total;
        let den = self.half_length * (4.0 / 3.0 - self.pole_mass * c * c / total);
        let den_th = self.half_length * 2.0 * self.pole_mass * c * s / total;
        let num = self.gravity * s - c * temp;
        let num_th = self.gravity * c + s * temp - c * temp_th;
        let th = num / den;
        let th_th = (num_th * den - num * den_th) / (den * den);
        let th_w = -c * temp_w / den;
        let th_u = -c * temp_u / den;
        let k = pml / total;
        let x_th = temp_th - k * (th_th * c - th * s);
        let x_w = temp_w - k * th_w * c;
        let x_u = temp_u - k * th_u * c;
        Some((
            Mat::from_row_slice(2, 2, &[0.0, x_th, 0.0, th_th]),
            Mat::from_row_slice(2, 2, &[0.0, x_w, 0.0, th_w]),
            Mat::from_row_slice(2, 1, &[x_u, th_u]),
        ))
    }
}

/// Cart with two serial point-mass poles; both angles absolute, `0` upright.
#[derive(Debug, Clone, PartialEq)]
pub struct DoubleCartpole {
    pub cart_mass: f64,
    pub masses: [f64; 2],
    pub lengths: [f64; 2],
    pub gravity: f64,
}

impl Default for DoubleCartpole {
    fn default() -> Self {
        Self { cart_mass: 1.0, masses: [0.5, 0.5], lengths: [0.5, 0.5], gravity: 9.81 }
    }
}

impl Mechanism for DoubleCartpole {
    fn dof(&self) -> usize {
        3
    }

    fn accel(&self, q: &Vector, v: &Vector, u: &Vector) -> Vector {
        let (mass, rhs) = self.terms(q, v, u);
        solve_vec(&mass, &rhs, "double cartpole mass matrix").unwrap_or_else(|_| Vector::from_element(3, f64::NAN))
    }

    fn accel_jacobian(&self, q: &Vector, v: &Vector, u: &Vector) -> Option<(Mat, Mat, Mat)> {
        let [m1, m2] = self.masses;
        let [l1, l2] = self.lengths;
        let g = self.gravity;
        let (s1, c1) = q[1].sin_cos();
        let (s2, c2) = q[2].sin_cos();
        let (s12, c12) = (q[1] - q[2]).sin_cos();
        let (w1, w2) = (v[1], v[2]);
        let m12 = m1 + m2;
        let (mass, rhs) = self.terms(q, v, u);
        let lu = mass.lu();
        let acc = lu.solve(&rhs)?;

        let sym = |a: f64, b: f64, c: f64| Mat::from_row_slice(3, 3, &[0.0, a, b, a, 0.0, c, b, c, 0.0]);
        let dmass = [Mat::zeros(3, 3), sym(-m12 * l1 * s1, 0.0, -m2 * l1 * l2 * s12), sym(0.0, -m2 * l2 * s2, m2 * l1 * l2 * s12)];
        let drhs_dq = [
            dvector![0.0, 0.0, 0.0],
            dvector![m12 * l1 * c1 * w1 * w1, m12 * g * l1 * c1 - m2 * l1 * l2 * c12 * w2 * w2, m2 * l2 * l1 * c12 * w1 * w1],
            dvector![m2 * l2 * c2 * w2 * w2, m2 * l1 * l2 * c12 * w2 * w2, m2 * l2 * (g * c2 - l1 * c12 * w1 * w1)],
        ];
        let drhs_dv = [
            dvector![0.0, 0.0, 0.0],
            dvector![2.0 * m12 * l1 * s1 * w1, 0.0, 2.0 * m2 * l2 * l1 * s12 * w1],
            dvector![2.0 * m2 * l2 * s2 * w2, -2.0 * m2 * l1 * l2 * s12 * w2, 0.0],
        ];
        let mut aq = Mat::zeros(3, 3);
        let mut av = Mat::zeros(3, 3);
        for i in 0..3 {
            aq.set_column(i, &lu.solve(&(&drhs_dq[i] - &dmass[i] * &acc))?);
            av.set_column(i, &lu.solve(&drhs_dv[i])?);
        }
        let au = lu.solve(&Mat::from_column_slice(3, 1, &[1.0, 0.0, 0.0]))?;
        Some((aq, av, au))
    }
}

impl DoubleCartpole {
    /// Mass matrix and right-hand side of `M(q) q̈ = rhs(q, q̇, u)`.
    fn terms(&self, q: &Vector, v: &Vector, u: &Vector) -> (Mat, Vector) {
        let [m1, m2] = self.masses;
        let [l1, l2] = self.lengths;
        let g = self.gravity;
        let (s1, c1) = q[1].sin_cos();
        let (s2, c2) = q[2].sin_cos();
        let (s12, c12) = (q[1] - q[2]).sin_cos();
        let (w1, w2) = (v[1], v[2]);
        let m12 = m1 + m2;
        let mass = Mat::from_row_slice(
            3,
            3,
            &[
                self.cart_mass + m12,
                m12 * l1 * c1,
                m2 * l2 * c2,
                m12 * l1 * c1,
                m12 * l1 * l1,
                m2 * l1 * l2 * c12,
                m2 * l2 * c2,
                m2 * l1 * l2 * c12,
                m2 * l2 * l2,
            ],
        );
        let rhs = dvector![
            u[0] + m12 * l1 * s1 * w1 * w1 + m2 * l2 * s2 * w2 * w2,
            m12 * g * l1 * s1 - m2 * l1 * l2 * s12 * w2 * w2,
            m2 * l2 * (g * s2 + l1 * s12 * w1 * w1)
        ];
        (mass, rhs)
    }
}

/// A [`Mechanism`] integrated by semi-implicit Euler, with a trigonometric
/// feature cost. State is `[q; q̇]`.
pub struct MechanicalEnv<M> {
    pub name: String,
    pub mechanism: M,
    pub dt: f64,
    pub substeps: usize,
    pub horizon: usize,
    pub input_limits: Vec<(f64, f64)>,
    pub noise_cov: Mat,
    pub initial_state: Vector,
    pub features: Arc<TrigFeatures>,
    pub target: Vector,
    pub weight: Mat,
}

impl<M: Mechanism> MechanicalEnv<M> {
    fn split(&self, x: &Vector) -> (Vector, Vector) {
        let n = self.mechanism.dof();
        (x.rows(0, n).into_owned(), x.rows(n, n).into_owned())
    }

    fn join(q: &Vector, v: &Vector) -> Vector {
        let n = q.len();
        let mut x = Vector::zeros(2 * n);
        x.rows_mut(0, n).copy_from(q);
        x.rows_mut(n, n).copy_from(v);
        x
    }
}

impl<M: Mechanism> Environment for MechanicalEnv<M> {
    fn name(&self) -> &str {
        &self.name
    }

    fn state_dim(&self) -> usize {
        2 * self.mechanism.dof()
    }

    fn input_dim(&self) -> usize {
        self.input_limits.len()
    }

    fn dt(&self) -> f64 {
        self.dt
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn input_limits(&self) -> Option<&[(f64, f64)]> {
        Some(&self.input_limits)
    }

    fn noise_cov(&self) -> &Mat {
        &self.noise_cov
    }

    fn initial_state(&self) -> Vector {
        self.initial_state.clone()
    }

    fn observation_model(&self) -> ObservationModel {
        let features: Arc<dyn FeatureMap> = self.features.clone();
        ObservationModel::new(features, self.target.clone(), self.weight.clone()).expect("registry cost model is consistent")
    }

    fn dynamics(&self, x: &Vector, u: &Vector) -> Vector {
        let h = self.dt / self.substeps as f64;
        let (mut q, mut v) = self.split(x);
        for _ in 0..self.substeps {
            v += self.mechanism.accel(&q, &v, u) * h;
            q += &v * h;
        }
        Self::join(&q, &v)
    }

    fn dynamics_jacobians(&self, x: &Vector, u: &Vector) -> Option<(Mat, Mat)> {
        let n = self.mechanism.dof();
        let h = self.dt / self.substeps as f64;
        let (mut q, mut v) = self.split(x);
        let mut jx = eye(2 * n);
        let mut ju = Mat::zeros(2 * n, u.len());
        let id = eye(n);
        for _ in 0..self.substeps {
            let (aq, av, au) = self.mechanism.accel_jacobian(&q, &v, u)?;
            let dv_dq = &aq * h;
            let dv_dv = &id + &av * h;
            let dv_du = &au * h;
            let mut step = Mat::zeros(2 * n, 2 * n);
            step.view_mut((0, 0), (n, n)).copy_from(&(&id + &dv_dq * h));
            step.view_mut((0, n), (n, n)).copy_from(&(&dv_dv * h));
            step.view_mut((n, 0), (n, n)).copy_from(&dv_dq);
            step.view_mut((n, n), (n, n)).copy_from(&dv_dv);
            let mut step_u = Mat::zeros(2 * n, u.len());
            step_u.view_mut((0, 0), (n, u.len())).copy_from(&(&dv_du * h));
            step_u.view_mut((n, 0), (n, u.len())).copy_from(&dv_du);
            jx = &step * jx;
            ju = &step * ju + step_u;
            v += self.mechanism.accel(&q, &v, u) * h;
            q += &v * h;
        }
        Some((jx, ju))
    }
}

/// Time-invariant affine system with a quadratic state/input cost.
pub struct LinearEnv {
    pub name: String,
    pub model: LinearDynamics,
    pub horizon: usize,
    pub initial_state: Vector,
    pub cost: ObservationModel,
}

impl Environment for LinearEnv {
    fn name(&self) -> &str {
        &self.name
    }

    fn state_dim(&self) -> usize {
        self.model.state_dim()
    }

    fn input_dim(&self) -> usize {
        self.model.input_dim()
    }

    fn dt(&self) -> f64 {
        1.0
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn input_limits(&self) -> Option<&[(f64, f64)]> {
        None
    }

    fn noise_cov(&self) -> &Mat {
        &self.model.noise_cov
    }

    fn initial_state(&self) -> Vector {
        self.initial_state.clone()
    }

    fn observation_model(&self) -> ObservationModel {
        self.cost.clone()
    }

    fn dynamics(&self, x: &Vector, u: &Vector) -> Vector {
        self.model.mean_step(x, u)
    }

    fn dynamics_jacobians(&self, _x: &Vector, _u: &Vector) -> Option<(Mat, Mat)> {
        Some((self.model.A.clone(), self.model.B.clone()))
    }
}

pub fn pendulum() -> MechanicalEnv<Pendulum> {
    MechanicalEnv {
        name: "pendulum".into(),
        mechanism: Pendulum::default(),
        dt: 0.05,
        substeps: 1,
        horizon: 100,
        input_limits: vec![(-2.0, 2.0)],
        noise_cov: diag(&[1e-12, 1e-3]),
        initial_state: dvector![PI, 0.0],
        features: Arc::new(TrigFeatures::new(2, 1, vec![0])),
        target: dvector![0.0, 1.0, 0.0, 0.0],
        weight: diag(&[1.0, 100.0, 1.0, 1.0]),
    }
}

pub fn cartpole() -> MechanicalEnv<Cartpole> {
    MechanicalEnv {
        name: "cartpole".into(),
        mechanism: Cartpole::default(),
        dt: 0.05,
        substeps: 1000,
        horizon: 100,
        input_limits: vec![(-5.0, 5.0)],
        noise_cov: diag(&[1e-12, 1e-12, 1e-6, 1e-6]),
        initial_state: dvector![0.0, PI, 0.0, 0.0],
        features: Arc::new(TrigFeatures::new(4, 1, vec![1])),
        target: dvector![0.0, 0.0, 1.0, 0.0, 0.0, 0.0],
        weight: diag(&[1.0, 1.0, 100.0, 1.0, 1.0, 1.0]),
    }
}

pub fn double_cartpole() -> MechanicalEnv<DoubleCartpole> {
    MechanicalEnv {
        name: "double_cartpole".into(),
        mechanism: DoubleCartpole::default(),
        dt: 0.02,
        substeps: 10,
        horizon: 150,
        input_limits: vec![(-10.0, 10.0)],
        noise_cov: diag(&[1e-12, 1e-12, 1e-12, 1e-6, 1e-6, 1e-6]),
        initial_state: dvector![0.0, PI, PI, 0.0, 0.0, 0.0],
        features: Arc::new(TrigFeatures::new(6, 1, vec![1, 2])),
        target: dvector![0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0],
        weight: diag(&[1.0, 1.0, 100.0, 1.0, 100.0, 1.0, 1.0, 1.0, 1.0]),
    }
}

/// The two-state unstable test system with `Q = 10 I`, `R = 1`, goal `[10, 10]`.
pub fn linear_c1() -> LinearEnv {
    let model = LinearDynamics::new(
        Mat::from_row_slice(2, 2, &[1.1, 0.0, 0.1, 1.1]),
        Mat::from_row_slice(2, 1, &[0.1, 0.0]),
        dvector![-1.0, -2.0],
        Mat::zeros(2, 2),
    )
    .expect("consistent dimensions");
    let cost =
        ObservationModel::quadratic(&(eye(2) * 10.0), &eye(1), &dvector![10.0, 10.0], &dvector![0.0]).expect("consistent dimensions");
    LinearEnv { name: "linear_c1".into(), model, horizon: 60, initial_state: Vector::zeros(2), cost }
}

/// Registry-level parameter overrides.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EnvOverrides {
    pub dt: Option<f64>,
    pub horizon: Option<usize>,
    pub substeps: Option<usize>,
    pub noise_cov: Option<Mat>,
    pub target: Option<Vector>,
    pub weight: Option<Mat>,
}

pub fn env_names() -> &'static [&'static str] {
    &["pendulum", "cartpole", "double_cartpole", "linear_c1"]
}

fn apply<M: Mechanism + 'static>(mut env: MechanicalEnv<M>, ov: &EnvOverrides) -> Result<Box<dyn Environment>> {
    if let Some(dt) = ov.dt {
        env.dt = dt;
    }
    if let Some(t) = ov.horizon {
        env.horizon = t;
    }
    if let Some(n) = ov.substeps {
        env.substeps = n;
    }
    if let Some(c) = &ov.noise_cov {
        env.noise_cov = c.clone();
    }
    if let Some(z) = &ov.target {
        env.target = z.clone();
    }
    if let Some(w) = &ov.weight {
        env.weight = w.clone();
    }
    if env.dt.is_nan() || env.dt <= 0.0 || env.substeps == 0 {
        return Err(Error::Invalid("dt must be positive and substeps at least 1".into()));
    }
    let n = env.state_dim();
    let d = env.features.dim();
    if env.noise_cov.shape() != (n, n) || env.target.len() != d || env.weight.shape() != (d, d) {
        return Err(Error::dim("environment overrides", format!("state {n}, features {d}")));
    }
    env.observation_model_checked()?;
    Ok(Box::new(env))
}

impl<M: Mechanism> MechanicalEnv<M> {
    fn observation_model_checked(&self) -> Result<ObservationModel> {
        let features: Arc<dyn FeatureMap> = self.features.clone();
        ObservationModel::new(features, self.target.clone(), self.weight.clone())
    }
}

/// Build a registered environment by name.
pub fn make_env(name: &str, ov: &EnvOverrides) -> Result<Box<dyn Environment>> {
    match name {
        "pendulum" => apply(pendulum(), ov),
        "cartpole" => apply(cartpole(), ov),
        "double_cartpole" => apply(double_cartpole(), ov),
        "linear_c1" => {
            let mut env = linear_c1();
            if let Some(t) = ov.horizon {
                env.horizon = t;
            }
            if let Some(c) = &ov.noise_cov {
                env.model = LinearDynamics::new(env.model.A, env.model.B, env.model.a, c.clone())?;
            }
            if ov.target.is_some() || ov.weight.is_some() {
                let target = ov.target.clone().unwrap_or(env.cost.target.clone());
                let weight = ov.weight.clone().unwrap_or(env.cost.weight.clone());
                env.cost = ObservationModel::new(env.cost.features.clone(), target, weight)?;
            }
            Ok(Box::new(env))
        }
        other => Err(Error::Invalid(format!("unknown environment '{other}', expected one of {:?}", env_names()))),
    }
}
