//! Time-varying linear Gaussian feedback from smoothed messages.

use serde::{Deserialize, Serialize};

use crate::engine::{MessageState, Priors, TerminalMode};
use crate::error::{Error, Result};
use crate::gaussian::GaussianCanonical;
use crate::linalg::{identity, inverse, solve, spd_inverse, symmetrize, Mat, Vector};

/// `u ~ N(K x + k, cov)` at one timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerStep {
    pub K: Mat,
    pub k: Vector,
    pub cov: Mat,
}

impl ControllerStep {
    pub fn mean(&self, x: &Vector) -> Vector {
        &self.K * x + &self.k
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearGaussianController {
    pub steps: Vec<ControllerStep>,
}

#[derive(Serialize, Deserialize)]
struct StepRecord {
    t: usize,
    K: Vec<Vec<f64>>,
    k: Vec<f64>,
    Sigma_k: Vec<Vec<f64>>,
}

fn rows(m: &Mat) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(rows: &[Vec<f64>], ncols: usize, what: &str) -> Result<Mat> {
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::dim("controller record", format!("ragged {what}")));
    }
    Ok(Mat::from_row_iterator(rows.len(), ncols, rows.iter().flatten().copied()))
}

impl Serialize for LinearGaussianController {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let records: Vec<StepRecord> = self
            .steps
            .iter()
            .enumerate()
            .map(|(t, st)| StepRecord { t, K: rows(&st.K), k: st.k.iter().copied().collect(), Sigma_k: rows(&st.cov) })
            .collect();
        records.serialize(s)
    }
}

impl<'de> Deserialize<'de> for LinearGaussianController {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let records = Vec::<StepRecord>::deserialize(d)?;
        let mut steps = Vec::with_capacity(records.len());
        for (i, r) in records.into_iter().enumerate() {
            if r.t != i {
                return Err(D::Error::custom(format!("expected t = {i}, found {}", r.t)));
            }
            let m = r.k.len();
            let n = r.K.first().map_or(0, |row| row.len());
            if r.K.len() != m || r.Sigma_k.len() != m {
                return Err(D::Error::custom(format!("step {i}: K and Sigma_k need {m} rows")));
            }
            let K = from_rows(&r.K, n, "K").map_err(D::Error::custom)?;
            let cov = from_rows(&r.Sigma_k, m, "Sigma_k").map_err(D::Error::custom)?;
            steps.push(ControllerStep { K, k: Vector::from_vec(r.k), cov });
        }
        Ok(Self { steps })
    }
}

impl LinearGaussianController {
    pub fn zeros(state_dim: usize, input_dim: usize, len: usize) -> Self {
        let step =
            ControllerStep { K: Mat::zeros(input_dim, state_dim), k: Vector::zeros(input_dim), cov: Mat::zeros(input_dim, input_dim) };
        Self { steps: vec![step; len] }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.steps.first().map_or(0, |s| s.K.ncols())
    }

    pub fn input_dim(&self) -> usize {
        self.steps.first().map_or(0, |s| s.K.nrows())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("controller serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Invalid(format!("controller JSON: {e}")))
    }
}

/// Open-loop controller `K = 0`, `k = μ_u`, `Σ = Σ_u` read from the input priors.
pub fn controller_from_priors(priors: &Priors, state_dim: usize) -> LinearGaussianController {
    let steps =
        priors.inputs.iter().map(|u| ControllerStep { K: Mat::zeros(u.dim(), state_dim), k: u.mean.clone(), cov: u.cov.clone() }).collect();
    LinearGaussianController { steps }
}

/// `p(u_t | x_t)` of the smoothed joint at every `t = 0..=T`.
///
/// With `W = (I + Λ← Σ_η)⁻¹Λ←` and `ν_y = (I + Λ← Σ_η)⁻¹ν←` the backward
/// message on `X_{t+1}` seen through the process noise:
///
/// ```text
/// Σ_k = (Λ_u + FᵀΛ_ξF + BᵀWB)⁻¹
/// K   = −Σ_k (FᵀΛ_ξE + BᵀWA)
/// k   =  Σ_k (ν_u + FᵀΛ_ξ(z − e) + Bᵀ(ν_y − W a))
/// ```
pub fn extract_controller(msgs: &[MessageState]) -> Result<LinearGaussianController> {
    let horizon = msgs.len().checked_sub(1).ok_or_else(|| Error::Invalid("empty message state".into()))?;
    let mut steps = Vec::with_capacity(msgs.len());
    for (t, m) in msgs.iter().enumerate() {
        let step = || -> Result<ControllerStep> {
            let o = &m.observation;
            let prior_prec = spd_inverse(&m.u_prior.cov, "input prior covariance")?;
            let mut H = &prior_prec + o.F.transpose() * &o.precision * &o.F;
            let mut G = o.F.transpose() * &o.precision * &o.E;
            let mut h = &prior_prec * &m.u_prior.mean + o.F.transpose() * &o.precision * (&o.target - &o.e);
            if t < horizon {
                let d = m.dynamics.as_ref().ok_or_else(|| Error::Invalid("missing dynamics".into()))?;
                let next = msgs[t + 1].backward()?;
                let n = d.state_dim();
                let M = identity(n) + &next.precision * &d.noise_cov;
                let W = symmetrize(&solve(&M, &next.precision, "I + Λ←Σ_η")?);
                let nu = solve(&M, &Mat::from_column_slice(n, 1, next.info.as_slice()), "I + Λ←Σ_η")?.column(0).into_owned();
                H += d.B.transpose() * &W * &d.B;
                G += d.B.transpose() * &W * &d.A;
                h += d.B.transpose() * (nu - &W * &d.a);
            }
            let cov = spd_inverse(&H, "controller precision")?;
            Ok(ControllerStep { K: -(&cov * G), k: &cov * h, cov })
        };
        steps.push(step().map_err(|e| e.at_timestep(t))?);
    }
    Ok(LinearGaussianController { steps })
}

/// Dimensionless fractions of forward uncertainty and backward optimality at
/// one step.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleMatrices {
    /// `Γ = Λ→_{x‴}(Λ←_{x_{t+1}} + Λ→_{x‴})⁻¹`.
    pub gamma: Mat,
    /// `Ψ = Σ→_{x‴}(Λ→_{x‴} + Λ←_{x‴})`.
    pub psi: Mat,
    /// `Λ←_{x‴} = (I + Λ←_{x_{t+1}} Σ→_{u″})⁻¹Λ←_{x_{t+1}}`.
    pub noisy_precision: Mat,
}

/// `Γ` and `Ψ` from the forward covariances of `X‴` and `U″` and the
/// backward precision on `X_{t+1}`.
pub fn scale_matrices(x_noisy_cov: &Mat, u_prop_cov: &Mat, next_precision: &Mat) -> Result<ScaleMatrices> {
    let n = x_noisy_cov.nrows();
    if x_noisy_cov.shape() != (n, n) || u_prop_cov.shape() != (n, n) || next_precision.shape() != (n, n) {
        return Err(Error::dim("scale_matrices", "all inputs must be square of one size"));
    }
    let gamma = inverse(&(identity(n) + next_precision * x_noisy_cov), "I + Λ←Σ→ for Γ")?;
    let noisy_precision = solve(&(identity(n) + next_precision * u_prop_cov), next_precision, "I + Λ←Σ_u″")?;
    let psi = identity(n) + x_noisy_cov * &noisy_precision;
    Ok(ScaleMatrices { gamma, psi, noisy_precision })
}

pub fn compute_gamma_psi(msgs: &[MessageState], t: usize) -> Result<ScaleMatrices> {
    if t + 1 >= msgs.len() {
        return Err(Error::Invalid(format!("scale matrices need t < T, got {t}")));
    }
    let m = &msgs[t];
    let x_noisy = m.x_noisy.as_ref().ok_or_else(|| Error::Invalid("missing X‴ message".into()))?;
    let u_prop = m.u_prop.as_ref().ok_or_else(|| Error::Invalid("missing U″ message".into()))?;
    scale_matrices(&x_noisy.cov, &u_prop.cov, &msgs[t + 1].backward()?.precision).map_err(|e| e.at_timestep(t))
}

/// The controller in its `Γ`/`Ψ` form with `Σ_k` the input marginal.
///
/// Agrees with [`extract_controller`] in the deterministic, broad-prior,
/// large-`α` regime and drifts from it elsewhere.
pub fn extract_controller_scaled(msgs: &[MessageState]) -> Result<LinearGaussianController> {
    let horizon = msgs.len().checked_sub(1).ok_or_else(|| Error::Invalid("empty message state".into()))?;
    let mut steps = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let step = || -> Result<ControllerStep> {
            let m = &msgs[t];
            let o = &m.observation;
            let d = m.dynamics.as_ref().ok_or_else(|| Error::Invalid("missing dynamics".into()))?;
            let next = msgs[t + 1].backward()?;
            let u_prop = m.u_prop.as_ref().unwrap();
            let sc = compute_gamma_psi(msgs, t)?;
            let n = d.state_dim();
            let prior_prec = spd_inverse(&m.u_prior.cov, "input prior covariance")?;
            let innov = spd_inverse(&(&o.noise_cov + &o.E * &m.x_fwd.cov * o.E.transpose()), "Σ_ξ + EΣEᵀ")?;
            let gl = &sc.gamma * &next.precision;
            let cov = spd_inverse(&(&prior_prec + o.F.transpose() * &innov * &o.F + d.B.transpose() * &gl * &d.B), "Σ̂_u")?;
            let K = -(&cov * d.B.transpose() * &gl * &sc.psi * &d.A);
            let M = identity(n) + &next.precision * &u_prop.cov;
            let nu_noisy =
                solve(&M, &Mat::from_column_slice(n, 1, (&next.info - &next.precision * &u_prop.mean).as_slice()), "I + Λ←Σ_u″")?
                    .column(0)
                    .into_owned();
            let opt = &sc.gamma * &next.info + (identity(n) - &sc.gamma) * nu_noisy - &gl * &sc.psi * &d.a;
            let k = &cov
                * (&prior_prec * &m.u_prior.mean
                    + o.F.transpose() * &innov * o.residual(&m.x_fwd.mean, &Vector::zeros(o.F.ncols()))
                    + d.B.transpose() * opt);
            Ok(ControllerStep { K, k, cov })
        };
        steps.push(step().map_err(|e| e.at_timestep(t))?);
    }
    Ok(LinearGaussianController { steps })
}

/// Backward messages on every `X_t` from the closed-form recursion
///
/// ```text
/// Λ←_t = EᵀΛ_z E + AᵀMΛ←_{t+1}A,   M = (I + Λ←_{t+1}S)⁻¹,  S = Σ_η + BΣ_u′Bᵀ
/// ν←_t = EᵀΛ_z(z − Fμ_u − e) + AᵀM(ν←_{t+1} − Λ←_{t+1}(a + Bμ_u′))
/// ```
///
/// with `Λ_z = (Σ_ξ + FΣ_uFᵀ)⁻¹`, using only forward quantities.
pub fn riccati_backward(msgs: &[MessageState], mode: TerminalMode) -> Result<Vec<GaussianCanonical>> {
    let horizon = msgs.len().checked_sub(1).ok_or_else(|| Error::Invalid("empty message state".into()))?;
    let obs_term = |m: &MessageState| -> Result<(Mat, Vector)> {
        let o = &m.observation;
        let lz = spd_inverse(&(&o.noise_cov + &o.F * &m.u_prior.cov * o.F.transpose()), "Σ_ξ + FΣFᵀ")?;
        let r = &o.target - &o.F * &m.u_prior.mean - &o.e;
        Ok((o.E.transpose() * &lz * &o.E, o.E.transpose() * &lz * r))
    };
    let last = &msgs[horizon];
    let (mut lam, mut nu) = match mode {
        TerminalMode::QfEqualsQ => obs_term(last)?,
        TerminalMode::KappaScale { kappa } => {
            let p = spd_inverse(&last.x_fwd.cov, "terminal forward covariance")? * (kappa - 1.0);
            let v = &p * &last.x_fwd.mean;
            (p, v)
        }
    };
    let mut out = vec![GaussianCanonical::vacuous(0); msgs.len()];
    out[horizon] = GaussianCanonical { info: nu.clone(), precision: symmetrize(&lam) };
    for t in (0..horizon).rev() {
        let m = &msgs[t];
        let d = m.dynamics.as_ref().ok_or_else(|| Error::Invalid("missing dynamics".into()).at_timestep(t))?;
        let n = d.state_dim();
        let S = &d.noise_cov + &d.B * &m.u_innov.cov * d.B.transpose();
        let M = identity(n) + &lam * S;
        let rhs_vec = &nu - &lam * (&d.a + &d.B * &m.u_innov.mean);
        let mut rhs = Mat::zeros(n, n + 1);
        rhs.columns_mut(0, n).copy_from(&lam);
        rhs.column_mut(n).copy_from(&rhs_vec);
        let sol = solve(&M, &rhs, "I + Λ←S").map_err(|e| e.at_timestep(t))?;
        let (lo, no) = obs_term(m).map_err(|e| e.at_timestep(t))?;
        lam = symmetrize(&(lo + d.A.transpose() * sol.columns(0, n) * &d.A));
        nu = no + d.A.transpose() * sol.column(n);
        out[t] = GaussianCanonical { info: nu.clone(), precision: lam.clone() };
    }
    Ok(out)
}
