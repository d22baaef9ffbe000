//! Gaussian messages in moment, canonical and auxiliary form, and the
//! elementary rules for linear maps, sum nodes and equality nodes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{identity, is_finite, is_finite_vec, min_eigenvalue, solve, spd_inverse, symmetrize, Mat, Vector};

/// Mean and covariance. The covariance may be singular.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMoment {
    pub mean: Vector,
    pub cov: Mat,
}

/// Scaled mean `ν = Λμ` and precision `Λ`. The precision may be rank deficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianCanonical {
    pub info: Vector,
    pub precision: Mat,
}

/// Auxiliary pair `(ν̃, Λ̃)` with `Λ̃ = (Σ_fwd + Σ_bwd)⁻¹`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianAuxiliary {
    pub info: Vector,
    pub precision: Mat,
}

fn check_pair(op: &'static str, v: &Vector, m: &Mat) -> Result<()> {
    if m.nrows() != m.ncols() || m.nrows() != v.len() {
        return Err(Error::dim(op, format!("vector {} with matrix {}x{}", v.len(), m.nrows(), m.ncols())));
    }
    if !is_finite_vec(v) || !is_finite(m) {
        return Err(Error::NonFinite(op.to_string()));
    }
    Ok(())
}

fn check_psd(op: &'static str, m: &Mat) -> Result<()> {
    let tol = 1e-9 * m.amax().max(1.0);
    if min_eigenvalue(m) < -tol {
        return Err(Error::Invalid(format!("{op}: matrix is not positive semidefinite")));
    }
    Ok(())
}

fn same_dim(op: &'static str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::dim(op, format!("{a} vs {b}")));
    }
    Ok(())
}

impl GaussianMoment {
    /// Validated constructor: symmetrizes and rejects indefinite covariances.
    pub fn new(mean: Vector, cov: Mat) -> Result<Self> {
        check_pair("GaussianMoment", &mean, &cov)?;
        let cov = symmetrize(&cov);
        check_psd("GaussianMoment", &cov)?;
        Ok(Self { mean, cov })
    }

    pub(crate) fn raw(mean: Vector, cov: Mat) -> Self {
        Self { mean, cov: symmetrize(&cov) }
    }

    pub fn deterministic(mean: Vector) -> Self {
        let d = mean.len();
        Self { mean, cov: Mat::zeros(d, d) }
    }

    pub fn isotropic(mean: Vector, var: f64) -> Self {
        let d = mean.len();
        Self { mean, cov: identity(d) * var }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn to_canonical(&self) -> Result<GaussianCanonical> {
        let precision = spd_inverse(&self.cov, "moment to canonical")?;
        Ok(GaussianCanonical { info: &precision * &self.mean, precision })
    }
}

impl GaussianCanonical {
    pub fn new(info: Vector, precision: Mat) -> Result<Self> {
        check_pair("GaussianCanonical", &info, &precision)?;
        let precision = symmetrize(&precision);
        check_psd("GaussianCanonical", &precision)?;
        Ok(Self { info, precision })
    }

    pub(crate) fn raw(info: Vector, precision: Mat) -> Self {
        Self { info, precision: symmetrize(&precision) }
    }

    /// The uninformative message.
    pub fn vacuous(d: usize) -> Self {
        Self { info: Vector::zeros(d), precision: Mat::zeros(d, d) }
    }

    pub fn dim(&self) -> usize {
        self.info.len()
    }

    pub fn to_moment(&self) -> Result<GaussianMoment> {
        let cov = spd_inverse(&self.precision, "canonical to moment")?;
        Ok(GaussianMoment { mean: &cov * &self.info, cov })
    }
}

impl GaussianAuxiliary {
    pub fn zero(d: usize) -> Self {
        Self { info: Vector::zeros(d), precision: Mat::zeros(d, d) }
    }

    pub fn dim(&self) -> usize {
        self.info.len()
    }
}

/// `y = A x`: mean `Aμ`, covariance `AΣAᵀ`.
pub fn linear_transform_fwd(a: &Mat, x: &GaussianMoment) -> Result<GaussianMoment> {
    same_dim("linear_transform_fwd", a.ncols(), x.dim())?;
    Ok(GaussianMoment::raw(a * &x.mean, a * &x.cov * a.transpose()))
}

/// Message to `x` from a message on `y = A x`: `(Aᵀν, AᵀΛA)`.
pub fn linear_transform_bwd(a: &Mat, y: &GaussianCanonical) -> Result<GaussianCanonical> {
    same_dim("linear_transform_bwd", a.nrows(), y.dim())?;
    Ok(GaussianCanonical::raw(a.transpose() * &y.info, a.transpose() * &y.precision * a))
}

/// `y = x + z` for independent `x`, `z`.
pub fn add_fwd(x: &GaussianMoment, z: &GaussianMoment) -> Result<GaussianMoment> {
    same_dim("add_fwd", x.dim(), z.dim())?;
    Ok(GaussianMoment::raw(&x.mean + &z.mean, &x.cov + &z.cov))
}

/// Message to `x` from a message on `y = x + z`, with `z` known in moment form.
///
/// Computed as `(I + ΛΣ_z)⁻¹(ν − Λμ_z, Λ)` so singular `Σ_z` and singular `Λ`
/// are both fine.
pub fn add_bwd(y: &GaussianCanonical, z: &GaussianMoment) -> Result<GaussianCanonical> {
    same_dim("add_bwd", y.dim(), z.dim())?;
    let d = y.dim();
    let m = identity(d) + &y.precision * &z.cov;
    let rhs = concat_cols(&y.precision, &(&y.info - &y.precision * &z.mean));
    let sol = solve(&m, &rhs, "add_bwd (I + ΛΣ)")?;
    let precision = sol.columns(0, d).into_owned();
    let info = sol.column(d).into_owned();
    Ok(GaussianCanonical::raw(info, precision))
}

/// Equality node: parameters add.
pub fn equality_fuse(a: &GaussianCanonical, b: &GaussianCanonical) -> Result<GaussianCanonical> {
    same_dim("equality_fuse", a.dim(), b.dim())?;
    Ok(GaussianCanonical::raw(&a.info + &b.info, &a.precision + &b.precision))
}

/// Posterior of an edge from its forward and backward messages.
///
/// Equal to `Σ = (Λ_f + Λ_b)⁻¹, μ = Σ(ν_f + ν_b)`, evaluated as
/// `(I + Σ_f Λ_b)⁻¹(Σ_f, μ_f + Σ_f ν_b)` so a singular forward covariance needs
/// no inversion.
pub fn fuse_marginal(fwd: &GaussianMoment, bwd: &GaussianCanonical) -> Result<GaussianMoment> {
    same_dim("fuse_marginal", fwd.dim(), bwd.dim())?;
    let d = fwd.dim();
    let m = identity(d) + &fwd.cov * &bwd.precision;
    let rhs = concat_cols(&fwd.cov, &(&fwd.mean + &fwd.cov * &bwd.info));
    let sol = solve(&m, &rhs, "fuse_marginal (I + ΣΛ)")?;
    let out = GaussianMoment::raw(sol.column(d).into_owned(), sol.columns(0, d).into_owned());
    if !is_finite_vec(&out.mean) || !is_finite(&out.cov) {
        return Err(Error::Singular("fuse_marginal".into()));
    }
    Ok(out)
}

/// Auxiliary form from the forward message and the marginal of one edge.
pub fn auxiliary_of(fwd: &GaussianMoment, marginal: &GaussianMoment) -> Result<GaussianAuxiliary> {
    same_dim("auxiliary_of", fwd.dim(), marginal.dim())?;
    let lf = spd_inverse(&fwd.cov, "auxiliary_of forward covariance")?;
    let precision = symmetrize(&(&lf - &lf * &marginal.cov * &lf));
    let info = &lf * (&fwd.mean - &marginal.mean);
    Ok(GaussianAuxiliary { info, precision })
}

/// Auxiliary form straight from the two messages: `Λ̃ = (Σ_f + Σ_b)⁻¹`,
/// `ν̃ = Λ̃(μ_f − μ_b)`, evaluated without inverting `Λ_b`.
pub fn auxiliary_from_messages(fwd: &GaussianMoment, bwd: &GaussianCanonical) -> Result<GaussianAuxiliary> {
    same_dim("auxiliary_from_messages", fwd.dim(), bwd.dim())?;
    let d = fwd.dim();
    let m = identity(d) + &bwd.precision * &fwd.cov;
    let rhs = concat_cols(&bwd.precision, &(&bwd.precision * &fwd.mean - &bwd.info));
    let sol = solve(&m, &rhs, "auxiliary_from_messages (I + ΛΣ)")?;
    Ok(GaussianAuxiliary { info: sol.column(d).into_owned(), precision: symmetrize(&sol.columns(0, d).into_owned()) })
}

/// Auxiliary form of `x` from that of `y = A x (+ offset)`.
pub fn auxiliary_transform_bwd(a: &Mat, y: &GaussianAuxiliary) -> Result<GaussianAuxiliary> {
    same_dim("auxiliary_transform_bwd", a.nrows(), y.dim())?;
    Ok(GaussianAuxiliary { info: a.transpose() * &y.info, precision: symmetrize(&(a.transpose() * &y.precision * a)) })
}

/// Marginal from a forward message and the auxiliary form on the same edge.
pub fn marginal_from_auxiliary(fwd: &GaussianMoment, aux: &GaussianAuxiliary) -> Result<GaussianMoment> {
    same_dim("marginal_from_auxiliary", fwd.dim(), aux.dim())?;
    let cov = &fwd.cov - &fwd.cov * &aux.precision * &fwd.cov;
    let mean = &fwd.mean - &fwd.cov * &aux.info;
    Ok(GaussianMoment::raw(mean, cov))
}

fn concat_cols(m: &Mat, v: &Vector) -> Mat {
    let mut out = Mat::zeros(m.nrows(), m.ncols() + 1);
    out.columns_mut(0, m.ncols()).copy_from(m);
    out.column_mut(m.ncols()).copy_from(v);
    out
}
