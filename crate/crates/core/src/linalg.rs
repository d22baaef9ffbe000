//! Small dense helpers shared by the message rules and the Riccati code.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

pub fn identity(n: usize) -> Mat {
    Mat::identity(n, n)
}

/// Inverse of a symmetric positive definite matrix.
///
/// Cholesky first; if that fails the diagonal is loaded once with
/// `1e-9 * trace / n` and the factorization retried.
pub fn spd_inverse(m: &Mat, what: &str) -> Result<Mat> {
    check_square(m, "spd_inverse")?;
    if !is_finite(m) {
        return Err(Error::NonFinite(what.to_string()));
    }
    let s = symmetrize(m);
    if let Some(ch) = s.clone().cholesky() {
        return Ok(symmetrize(&ch.inverse()));
    }
    let n = s.nrows();
    let shift = 1e-9 * s.trace() / n as f64;
    if shift.is_finite() && shift > 0.0 {
        let loaded = &s + identity(n) * shift;
        if let Some(ch) = loaded.cholesky() {
            return Ok(symmetrize(&ch.inverse()));
        }
    }
    Err(Error::Singular(what.to_string()))
}

/// Solve `m x = rhs` for a general square `m` by LU.
pub fn solve(m: &Mat, rhs: &Mat, what: &str) -> Result<Mat> {
    check_square(m, "solve")?;
    if m.nrows() != rhs.nrows() {
        return Err(Error::dim("solve", format!("{}x{} vs rhs {} rows", m.nrows(), m.ncols(), rhs.nrows())));
    }
    let x = m.clone().lu().solve(rhs).ok_or_else(|| Error::Singular(what.to_string()))?;
    if !is_finite(&x) {
        return Err(Error::Singular(what.to_string()));
    }
    Ok(x)
}

pub fn solve_vec(m: &Mat, rhs: &Vector, what: &str) -> Result<Vector> {
    let x = solve(m, &Mat::from_column_slice(rhs.len(), 1, rhs.as_slice()), what)?;
    Ok(x.column(0).into_owned())
}

/// General inverse by LU.
pub fn inverse(m: &Mat, what: &str) -> Result<Mat> {
    solve(m, &identity(m.nrows()), what)
}

pub fn is_finite(m: &Mat) -> bool {
    m.iter().all(|v| v.is_finite())
}

pub fn is_finite_vec(v: &Vector) -> bool {
    v.iter().all(|x| x.is_finite())
}

pub fn check_square(m: &Mat, op: &'static str) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::dim(op, format!("expected square, got {}x{}", m.nrows(), m.ncols())));
    }
    Ok(())
}

pub fn asymmetry(m: &Mat) -> f64 {
    (m - m.transpose()).amax()
}

/// Smallest eigenvalue of the symmetric part.
pub fn min_eigenvalue(m: &Mat) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    symmetrize(m).symmetric_eigenvalues().min()
}

/// Lower factor `L` with `L Lᵀ = m` for a symmetric PSD matrix.
///
/// Falls back to an eigendecomposition with negative eigenvalues clipped, so
/// singular covariances are accepted.
pub fn psd_sqrt(m: &Mat) -> Mat {
    let s = symmetrize(m);
    if let Some(ch) = s.clone().cholesky() {
        return ch.l();
    }
    let eig = s.symmetric_eigen();
    let root = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * Mat::from_diagonal(&root)
}

pub fn block_diag(blocks: &[&Mat]) -> Mat {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Mat::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(*b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// Largest elementwise relative error `|a - b| / max(|b|, floor)`.
pub fn max_rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs() / y.abs().max(floor)).fold(0.0, f64::max)
}
