//! Brute-force references: the fully assembled joint Gaussian of a linear
//! problem, random separable instances and a golden-section maximizer.
#![allow(dead_code, non_snake_case)]

use i2c_core::engine::{ObservationTerm, Priors};
use i2c_core::gaussian::GaussianMoment;
use i2c_core::linalg::{Mat, Vector};
use i2c_core::models::LinearDynamics;
use nalgebra::Cholesky;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub struct Instance {
    pub dynamics: Vec<LinearDynamics>,
    pub observations: Vec<ObservationTerm>,
    pub priors: Priors,
    pub alpha: f64,
}

impl Instance {
    pub fn horizon(&self) -> usize {
        self.observations.len() - 1
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.dynamics[0].state_dim(), self.dynamics[0].input_dim())
    }

    pub fn model(&self, t: usize) -> &LinearDynamics {
        if self.dynamics.len() == 1 {
            &self.dynamics[0]
        } else {
            &self.dynamics[t]
        }
    }

    pub fn problem(&self) -> i2c_core::engine::LinearProblem {
        i2c_core::engine::LinearProblem::new(self.dynamics.clone(), self.observations.clone()).unwrap()
    }
}

fn standard(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn normal_mat(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> Mat {
    Mat::from_fn(r, c, |_, _| scale * standard(rng))
}

pub fn normal_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vector {
    Vector::from_fn(n, |_, _| scale * standard(rng))
}

/// `L Lᵀ + floor·I` with `L` Gaussian.
pub fn spd(rng: &mut ChaCha8Rng, n: usize, scale: f64, floor: f64) -> Mat {
    let l = normal_mat(rng, n, n, scale);
    let m = &l * l.transpose() + Mat::identity(n, n) * floor;
    (&m + m.transpose()) * 0.5
}

pub fn block_diag(a: &Mat, b: &Mat) -> Mat {
    let (n, m) = (a.nrows(), b.nrows());
    let mut out = Mat::zeros(n + m, n + m);
    out.view_mut((0, 0), (n, n)).copy_from(a);
    out.view_mut((n, n), (m, m)).copy_from(b);
    out
}

/// A linear problem whose cost observation splits into a state part and an
/// input part with a block-diagonal weight.
pub fn random_instance(seed: u64, dx: usize, du: usize, horizon: usize) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let time_varying = rng.random_bool(0.5);
    let n_models = if time_varying { horizon } else { 1 };
    let dynamics = (0..n_models)
        .map(|_| {
            let A = Mat::identity(dx, dx) * 0.9 + normal_mat(&mut rng, dx, dx, 0.3);
            let B = normal_mat(&mut rng, dx, du, 1.0);
            let a = normal_vec(&mut rng, dx, 0.5);
            let noise = spd(&mut rng, dx, 0.2, 0.01);
            LinearDynamics::new(A, B, a, noise).unwrap()
        })
        .collect();
    let observations = (0..=horizon)
        .map(|_| {
            let Ex = normal_mat(&mut rng, dx, dx, 1.0) + Mat::identity(dx, dx);
            let Fu = normal_mat(&mut rng, du, du, 1.0) + Mat::identity(du, du);
            let mut E = Mat::zeros(dx + du, dx);
            E.view_mut((0, 0), (dx, dx)).copy_from(&Ex);
            let mut F = Mat::zeros(dx + du, du);
            F.view_mut((dx, 0), (du, du)).copy_from(&Fu);
            let weight = block_diag(&spd(&mut rng, dx, 0.7, 0.2), &spd(&mut rng, du, 0.7, 0.2));
            ObservationTerm { E, F, e: normal_vec(&mut rng, dx + du, 0.3), target: normal_vec(&mut rng, dx + du, 1.0), weight }
        })
        .collect();
    let x0 = GaussianMoment::new(normal_vec(&mut rng, dx, 1.0), spd(&mut rng, dx, 0.5, 0.05)).unwrap();
    let inputs = (0..=horizon).map(|_| GaussianMoment::new(normal_vec(&mut rng, du, 0.5), spd(&mut rng, du, 0.8, 0.1)).unwrap()).collect();
    let alpha = rng.random_range(0.5..2.0);
    Instance { dynamics, observations, priors: Priors::new(x0, inputs).unwrap(), alpha }
}

/// Draw dimensions and a seed for one of the random problems.
pub fn random_shape(rng: &mut ChaCha8Rng) -> (u64, usize, usize, usize) {
    (rng.random(), rng.random_range(1..=3), rng.random_range(1..=2), rng.random_range(1..=5))
}

/// Stacked variable `v = (x_0, …, x_T, u_0, …, u_T)`.
pub struct Joint {
    pub dx: usize,
    pub du: usize,
    pub horizon: usize,
    pub mean: Vector,
    pub cov: Mat,
}

impl Joint {
    pub fn x(&self, t: usize) -> usize {
        t * self.dx
    }

    pub fn u(&self, t: usize) -> usize {
        (self.horizon + 1) * self.dx + t * self.du
    }

    pub fn x_marginal(&self, t: usize) -> (Vector, Mat) {
        let i = self.x(t);
        (self.mean.rows(i, self.dx).into_owned(), self.cov.view((i, i), (self.dx, self.dx)).into_owned())
    }

    pub fn u_marginal(&self, t: usize) -> (Vector, Mat) {
        let i = self.u(t);
        (self.mean.rows(i, self.du).into_owned(), self.cov.view((i, i), (self.du, self.du)).into_owned())
    }

    /// `p(u_t | x_t) = N(K x + k, S)`.
    pub fn conditional(&self, t: usize) -> (Mat, Vector, Mat) {
        let (i, j) = (self.x(t), self.u(t));
        let sxx = self.cov.view((i, i), (self.dx, self.dx)).into_owned();
        let sux = self.cov.view((j, i), (self.du, self.dx)).into_owned();
        let suu = self.cov.view((j, j), (self.du, self.du)).into_owned();
        let K = sux.clone() * sxx.clone().try_inverse().unwrap();
        let (mx, mu) = (self.mean.rows(i, self.dx).into_owned(), self.mean.rows(j, self.du).into_owned());
        let k = &mu - &K * mx;
        let S = suu - &K * sux.transpose();
        (K, k, S)
    }
}

/// Prior joint of all states and inputs as an affine map of the independent
/// start state, inputs and process noise.
pub fn prior_joint(inst: &Instance) -> Joint {
    let (dx, du) = inst.dims();
    let horizon = inst.horizon();
    let nv = (horizon + 1) * (dx + du);
    let nw = dx + (horizon + 1) * du + horizon * dx;
    let mut M = Mat::zeros(nv, nw);
    let mut c = Vector::zeros(nv);
    let mut w_mean = Vector::zeros(nw);
    let mut w_cov = Mat::zeros(nw, nw);
    let j = Joint { dx, du, horizon, mean: Vector::zeros(0), cov: Mat::zeros(0, 0) };
    let wu = |t: usize| dx + t * du;
    let weta = |t: usize| dx + (horizon + 1) * du + t * dx;

    w_mean.rows_mut(0, dx).copy_from(&inst.priors.x0.mean);
    w_cov.view_mut((0, 0), (dx, dx)).copy_from(&inst.priors.x0.cov);
    for t in 0..=horizon {
        w_mean.rows_mut(wu(t), du).copy_from(&inst.priors.inputs[t].mean);
        w_cov.view_mut((wu(t), wu(t)), (du, du)).copy_from(&inst.priors.inputs[t].cov);
        M.view_mut((j.u(t), wu(t)), (du, du)).copy_from(&Mat::identity(du, du));
    }
    for t in 0..horizon {
        w_cov.view_mut((weta(t), weta(t)), (dx, dx)).copy_from(&inst.model(t).noise_cov);
    }
    M.view_mut((0, 0), (dx, dx)).copy_from(&Mat::identity(dx, dx));
    for t in 0..horizon {
        let d = inst.model(t);
        let prev = M.view((j.x(t), 0), (dx, nw)).into_owned();
        let mut row = &d.A * prev;
        let mut block = row.view_mut((0, wu(t)), (dx, du));
        block += &d.B;
        let mut block = row.view_mut((0, weta(t)), (dx, dx));
        block += Mat::identity(dx, dx);
        M.view_mut((j.x(t + 1), 0), (dx, nw)).copy_from(&row);
        let cx = c.rows(j.x(t), dx).into_owned();
        c.rows_mut(j.x(t + 1), dx).copy_from(&(&d.A * cx + &d.a));
    }
    let mean = &M * w_mean + c;
    let cov = &M * w_cov * M.transpose();
    Joint { mean, cov: (&cov + cov.transpose()) * 0.5, ..j }
}

/// Condition the prior joint on the cost observations at the listed steps,
/// each with noise covariance `(αΘ)⁻¹`.
pub fn condition_on(inst: &Instance, prior: &Joint, steps: &[usize]) -> Joint {
    if steps.is_empty() {
        return Joint { mean: prior.mean.clone(), cov: prior.cov.clone(), ..*prior };
    }
    let nv = prior.mean.len();
    let dz: usize = steps.iter().map(|&t| inst.observations[t].E.nrows()).sum();
    let mut H = Mat::zeros(dz, nv);
    let mut resid = Vector::zeros(dz);
    let mut noise = Mat::zeros(dz, dz);
    let mut row = 0;
    for &t in steps {
        let o = &inst.observations[t];
        let d = o.E.nrows();
        H.view_mut((row, prior.x(t)), (d, prior.dx)).copy_from(&o.E);
        H.view_mut((row, prior.u(t)), (d, prior.du)).copy_from(&o.F);
        resid.rows_mut(row, d).copy_from(&(&o.target - &o.e));
        noise.view_mut((row, row), (d, d)).copy_from(&(o.weight.clone() * inst.alpha).try_inverse().unwrap());
        row += d;
    }
    let S = &H * &prior.cov * H.transpose() + noise;
    let chol = Cholesky::new((&S + S.transpose()) * 0.5).unwrap();
    let gain_t = chol.solve(&(&H * &prior.cov));
    let innovation = resid - &H * &prior.mean;
    let mean = &prior.mean + &prior.cov * H.transpose() * chol.solve(&innovation);
    let cov = &prior.cov - &prior.cov * H.transpose() * &gain_t;
    Joint { mean, cov: (&cov + cov.transpose()) * 0.5, ..*prior }
}

pub fn posterior(inst: &Instance) -> Joint {
    let all: Vec<usize> = (0..=inst.horizon()).collect();
    condition_on(inst, &prior_joint(inst), &all)
}

/// Largest `|a − b| / max(floor, |b|)` over all entries.
pub fn rel_err(a: &Mat, b: &Mat, floor: f64) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs() / y.abs().max(floor)).fold(0.0, f64::max)
}

pub fn rel_err_vec(a: &Vector, b: &Vector, floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs() / y.abs().max(floor)).fold(0.0, f64::max)
}

/// Maximizer of a unimodal function on `[lo, hi]`.
pub fn golden_section_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - g * (hi - lo);
    let mut b = lo + g * (hi - lo);
    let (mut fa, mut fb) = (f(a), f(b));
    while (hi - lo) > tol * (lo.abs() + hi.abs()).max(1e-300) {
        if fa < fb {
            lo = a;
            a = b;
            fa = fb;
            b = lo + g * (hi - lo);
            fb = f(b);
        } else {
            hi = b;
            b = a;
            fb = fa;
            a = hi - g * (hi - lo);
            fa = f(a);
        }
    }
    0.5 * (lo + hi)
}
