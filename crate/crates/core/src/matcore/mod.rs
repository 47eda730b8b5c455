//! Small dense complex matrix kernel.
//!
//! Sizes are tiny (m ≤ 8 in practice, at most 64), so everything here favours
//! robustness over speed: Jacobi methods for singular values and Hermitian
//! eigenproblems, shifted Hessenberg QR for general spectra.

mod decomp;
mod expm;
mod mat;

use thiserror::Error;

pub use decomp::{cholesky, eig, eigh, inverse, solve, svd, EigenResult, Svd};
pub use expm::{expm, EXPM_NORM_LIMIT};
pub use mat::{vec_dot, vec_norm, Mat, MAX_DIM};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatError {
    #[error("matrix dimension {0} outside 1..=64")]
    InvalidDimension(usize),
    #[error("expected {expected} entries, got {got}")]
    DataLength { expected: usize, got: usize },
    #[error("matrix has non-finite entries")]
    NonFinite,
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("eigensolver exceeded {0} iterations")]
    ConvergenceFailure(usize),
    #[error("‖tA‖ = {0:.3e} exceeds the scaling-and-squaring limit")]
    OverflowRisk(f64),
    #[error("matrix is not self-adjoint (‖A − A*‖ = {0:.3e})")]
    NotSelfAdjoint(f64),
    #[error("matrix is singular to working precision")]
    Singular,
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
}

/// Spectral norm, the largest singular value.
pub fn op_norm(a: &Mat) -> f64 {
    if a.dim() == 1 {
        return a[(0, 0)].norm();
    }
    svd(a, false).sigma[0]
}

/// Numerical rank with absolute tolerance `tol` on singular values.
pub fn rank(a: &Mat, tol: f64) -> usize {
    svd(a, false).sigma.iter().filter(|&&s| s > tol).count()
}

/// 2-norm condition number; infinite for singular input.
pub fn cond(a: &Mat) -> f64 {
    let s = svd(a, false).sigma;
    let lo = *s.last().unwrap();
    if lo == 0.0 {
        f64::INFINITY
    } else {
        s[0] / lo
    }
}

/// ‖A − A*‖ ≤ tol·max(1, ‖A‖).
pub fn is_selfadjoint(a: &Mat, tol: f64) -> bool {
    selfadjoint_defect(a) <= tol * op_norm(a).max(1.0)
}

/// ‖A − A*‖ in operator norm.
pub fn selfadjoint_defect(a: &Mat) -> f64 {
    op_norm(&(a - &a.adjoint()))
}

/// Extreme eigenvalues of the Hermitian part of `a`.
///
/// Fails with `NotSelfAdjoint` unless `a` is self-adjoint to 1e-10 relative.
pub fn psd_bounds(a: &Mat) -> Result<(f64, f64), MatError> {
    let defect = selfadjoint_defect(a);
    if defect > 1e-10 * op_norm(a).max(1.0) {
        return Err(MatError::NotSelfAdjoint(defect));
    }
    Ok(hermitian_bounds(&a.hermitian_part()))
}

/// Extreme eigenvalues of a matrix assumed Hermitian; no precondition check.
pub fn hermitian_bounds(h: &Mat) -> (f64, f64) {
    let n = h.dim();
    if n == 1 {
        let v = h[(0, 0)].re;
        return (v, v);
    }
    if n == 2 {
        let a = h[(0, 0)].re;
        let d = h[(1, 1)].re;
        let b = h[(0, 1)].norm();
        let mid = 0.5 * (a + d);
        let rad = (0.25 * (a - d) * (a - d) + b * b).sqrt();
        return (mid - rad, mid + rad);
    }
    let (vals, _) = eigh(h, false);
    (vals[0], vals[n - 1])
}
