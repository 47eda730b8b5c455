use num_complex::Complex64;
use serde::Serialize;

use super::mat::{vec_dot, vec_norm};
use super::{Mat, MatError};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);
const EPS: f64 = f64::EPSILON;

/// Singular value decomposition `A·V = U·Σ`, singular values descending.
#[derive(Debug, Clone)]
pub struct Svd {
    pub sigma: Vec<f64>,
    /// Right singular vectors as columns, when requested.
    pub v: Option<Mat>,
}

/// One-sided (Hestenes) Jacobi SVD.
pub fn svd(a: &Mat, want_v: bool) -> Svd {
    let n = a.dim();
    // Work on columns: cols[j] is column j of A.
    let mut cols: Vec<Vec<Complex64>> = (0..n).map(|j| a.column(j)).collect();
    let mut v: Option<Vec<Vec<Complex64>>> = want_v.then(|| {
        (0..n)
            .map(|j| {
                let mut e = vec![ZERO; n];
                e[j] = ONE;
                e
            })
            .collect()
    });
    let mut norms: Vec<f64> = cols.iter().map(|c| c.iter().map(|z| z.norm_sqr()).sum()).collect();

    for _sweep in 0..80 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = norms[p];
                let beta = norms[q];
                let gamma: Complex64 = cols[p].iter().zip(&cols[q]).map(|(x, y)| x.conj() * y).sum();
                let g = gamma.norm();
                if g == 0.0 || g <= EPS * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let phase = gamma / g;
                let zeta = (beta - alpha) / (2.0 * g);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                // b_q = conj(phase)·a_q makes the pair's inner product real.
                let pc = phase.conj();
                for i in 0..n {
                    let xp = cols[p][i];
                    let xq = cols[q][i] * pc;
                    cols[p][i] = xp * c - xq * s;
                    cols[q][i] = xp * s + xq * c;
                }
                if let Some(v) = v.as_mut() {
                    for i in 0..n {
                        let xp = v[p][i];
                        let xq = v[q][i] * pc;
                        v[p][i] = xp * c - xq * s;
                        v[q][i] = xp * s + xq * c;
                    }
                }
                norms[p] = cols[p].iter().map(|z| z.norm_sqr()).sum();
                norms[q] = cols[q].iter().map(|z| z.norm_sqr()).sum();
            }
        }
        if !rotated {
            break;
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    let sig: Vec<f64> = norms.iter().map(|x| x.sqrt()).collect();
    order.sort_by(|&i, &j| sig[j].total_cmp(&sig[i]).then(i.cmp(&j)));
    let sigma = order.iter().map(|&i| sig[i]).collect();
    let v = v.map(|v| {
        let mut m = Mat::zeros(n);
        for (k, &i) in order.iter().enumerate() {
            m.set_column(k, &v[i]);
        }
        m
    });
    Svd { sigma, v }
}

/// Eigen-decomposition of a Hermitian matrix by cyclic Jacobi rotations.
///
/// Only the Hermitian part of `h` is used. Eigenvalues ascend; eigenvector
/// columns are orthonormal and follow the sign convention of [`eig`].
pub fn eigh(h: &Mat, want_vectors: bool) -> (Vec<f64>, Option<Mat>) {
    let n = h.dim();
    let mut a = h.hermitian_part();
    let mut v = want_vectors.then(|| Mat::identity(n));
    for i in 0..n {
        a[(i, i)] = Complex64::new(a[(i, i)].re, 0.0);
    }
    let scale = a.frobenius_norm();
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[(i, j)].norm_sqr()).sum::<f64>().sqrt();
        if off <= EPS * EPS * scale || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let b = a[(p, q)];
                let bn = b.norm();
                if bn == 0.0 {
                    continue;
                }
                let app = a[(p, p)].re;
                let aqq = a[(q, q)].re;
                if bn <= EPS * 1e-3 * (app.abs() + aqq.abs()) {
                    a[(p, q)] = ZERO;
                    a[(q, p)] = ZERO;
                    continue;
                }
                let phase = b / bn;
                let zeta = (aqq - app) / (2.0 * bn);
                let t = if zeta == 0.0 { 1.0 } else { zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt()) };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                // U = diag(1, conj(phase)) · [[c, s], [-s, c]]
                let u00 = Complex64::new(c, 0.0);
                let u01 = Complex64::new(s, 0.0);
                let u10 = -phase.conj() * s;
                let u11 = phase.conj() * c;
                for i in 0..n {
                    let xp = a[(i, p)];
                    let xq = a[(i, q)];
                    a[(i, p)] = xp * u00 + xq * u10;
                    a[(i, q)] = xp * u01 + xq * u11;
                }
                for j in 0..n {
                    let xp = a[(p, j)];
                    let xq = a[(q, j)];
                    a[(p, j)] = u00.conj() * xp + u10.conj() * xq;
                    a[(q, j)] = u01.conj() * xp + u11.conj() * xq;
                }
                a[(p, q)] = ZERO;
                a[(q, p)] = ZERO;
                a[(p, p)] = Complex64::new(a[(p, p)].re, 0.0);
                a[(q, q)] = Complex64::new(a[(q, q)].re, 0.0);
                if let Some(v) = v.as_mut() {
                    for i in 0..n {
                        let xp = v[(i, p)];
                        let xq = v[(i, q)];
                        v[(i, p)] = xp * u00 + xq * u10;
                        v[(i, q)] = xp * u01 + xq * u11;
                    }
                }
            }
        }
    }
    let diag: Vec<f64> = (0..n).map(|i| a[(i, i)].re).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| diag[i].total_cmp(&diag[j]).then(i.cmp(&j)));
    let vals = order.iter().map(|&i| diag[i]).collect();
    let vecs = v.map(|v| {
        let mut out = Mat::zeros(n);
        for (k, &i) in order.iter().enumerate() {
            let mut col = v.column(i);
            normalize_phase(&mut col);
            out.set_column(k, &col);
        }
        out
    });
    (vals, vecs)
}

/// Result of a general eigen-decomposition.
#[derive(Debug, Clone, Serialize)]
pub struct EigenResult {
    pub eigenvalues: Vec<Complex64>,
    /// Unit-norm right eigenvectors as columns.
    pub vectors: Mat,
    pub diagonalizable: bool,
    /// 2-norm condition number of `vectors`.
    pub cond: f64,
}

impl EigenResult {
    /// Largest |Im λ|.
    pub fn max_imag(&self) -> f64 {
        self.eigenvalues.iter().map(|z| z.im.abs()).fold(0.0, f64::max)
    }
}

/// Eigenvalues and right eigenvectors of a general square matrix.
///
/// Hermitian input goes to [`eigh`]. Otherwise eigenvalues come from shifted
/// QR on the Hessenberg form and eigenvectors from null vectors of `A − λI`.
/// Eigenvalues are ordered by real part, then imaginary part.
pub fn eig(a: &Mat) -> Result<EigenResult, MatError> {
    let n = a.dim();
    let anorm = super::op_norm(a);
    if super::selfadjoint_defect(a) <= 1e-14 * anorm.max(f64::MIN_POSITIVE) {
        let (vals, vecs) = eigh(a, true);
        return Ok(EigenResult {
            eigenvalues: vals.into_iter().map(|x| Complex64::new(x, 0.0)).collect(),
            vectors: vecs.unwrap(),
            diagonalizable: true,
            cond: 1.0,
        });
    }

    let mut vals = hessenberg_qr_eigenvalues(a)?;
    vals.sort_by(|x, y| x.re.total_cmp(&y.re).then(x.im.total_cmp(&y.im)));

    // Group numerically coincident eigenvalues. Defective clusters split by
    // roughly ‖A‖·eps^(1/k), so the grouping radius is generous.
    let scale = anorm.max(f64::MIN_POSITIVE);
    let cluster_tol = 1e-5 * scale;
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut Vec<usize>, i: usize) -> usize {
        let mut r = i;
        while p[r] != r {
            r = p[r];
        }
        p[i] = r;
        r
    }
    for i in 0..n {
        for j in i + 1..n {
            if (vals[i] - vals[j]).norm() <= cluster_tol {
                let ri = find(&mut parent, i);
                let rj = find(&mut parent, j);
                if ri != rj {
                    parent[rj.max(ri)] = ri.min(rj);
                }
            }
        }
    }
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    let mut root_slot = vec![usize::MAX; n];
    for i in 0..n {
        let r = find(&mut parent, i);
        if root_slot[r] == usize::MAX {
            root_slot[r] = clusters.len();
            clusters.push(Vec::new());
        }
        clusters[root_slot[r]].push(i);
    }

    let mut vectors = Mat::zeros(n);
    let mut diagonalizable = true;
    for members in &clusters {
        let k = members.len();
        let mu: Complex64 = members.iter().map(|&i| vals[i]).sum::<Complex64>() / k as f64;
        let spread = members.iter().map(|&i| (vals[i] - mu).norm()).fold(0.0, f64::max);
        if k == 1 {
            let i = members[0];
            vectors.set_column(i, &null_vectors(a, vals[i], 1).remove(0));
            continue;
        }
        let shifted = shift(a, mu);
        let s = svd(&shifted, false);
        let tol = (1e-8 * scale).max(2.0 * spread);
        let geo = s.sigma.iter().filter(|&&x| x <= tol).count();
        if geo < k {
            diagonalizable = false;
        }
        if geo >= k && spread > 1e-8 * scale {
            for &i in members {
                vectors.set_column(i, &null_vectors(a, vals[i], 1).remove(0));
            }
        } else {
            let basis = null_vectors(a, mu, k);
            for (slot, &i) in members.iter().enumerate() {
                vals[i] = mu;
                vectors.set_column(i, &basis[slot]);
            }
        }
    }
    let cond = super::cond(&vectors);
    Ok(EigenResult { eigenvalues: vals, vectors, diagonalizable, cond })
}

fn shift(a: &Mat, mu: Complex64) -> Mat {
    let mut s = a.clone();
    for i in 0..a.dim() {
        s[(i, i)] -= mu;
    }
    s
}

/// The `k` right singular vectors of `A − μI` with smallest singular values,
/// each normalized and phase-fixed.
fn null_vectors(a: &Mat, mu: Complex64, k: usize) -> Vec<Vec<Complex64>> {
    let n = a.dim();
    let s = svd(&shift(a, mu), true);
    let v = s.v.unwrap();
    (0..k)
        .map(|j| {
            let mut col = v.column(n - 1 - j);
            let nrm = vec_norm(&col);
            for z in col.iter_mut() {
                *z /= nrm;
            }
            normalize_phase(&mut col);
            col
        })
        .collect()
}

/// Rotates the phase so the first component of (near-)largest magnitude is
/// real and positive.
pub(crate) fn normalize_phase(v: &mut [Complex64]) {
    let big = v.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if big == 0.0 {
        return;
    }
    let idx = v.iter().position(|z| z.norm() >= (1.0 - 1e-10) * big).unwrap();
    let ph = v[idx].conj() / v[idx].norm();
    for z in v.iter_mut() {
        *z *= ph;
    }
    v[idx] = Complex64::new(v[idx].re, 0.0);
}

fn hessenberg_qr_eigenvalues(a: &Mat) -> Result<Vec<Complex64>, MatError> {
    let n = a.dim();
    let mut h = a.clone();
    // Householder reduction to upper Hessenberg form.
    for k in 0..n.saturating_sub(2) {
        let x: Vec<Complex64> = (k + 1..n).map(|i| h[(i, k)]).collect();
        let xn = vec_norm(&x);
        if xn == 0.0 {
            continue;
        }
        let alpha = if x[0].norm() == 0.0 { -xn * ONE } else { -(x[0] / x[0].norm()) * xn };
        let mut v = x.clone();
        v[0] -= alpha;
        let vn = vec_norm(&v);
        if vn == 0.0 {
            continue;
        }
        for z in v.iter_mut() {
            *z /= vn;
        }
        // H ← (I − 2vv*) H (I − 2vv*)
        for j in 0..n {
            let col: Vec<Complex64> = (k + 1..n).map(|i| h[(i, j)]).collect();
            let d = vec_dot(&col, &v); // Σ col_i conj(v_i) = v* col
            for (t, i) in (k + 1..n).enumerate() {
                h[(i, j)] -= v[t] * d * 2.0;
            }
        }
        for i in 0..n {
            let row: Vec<Complex64> = (k + 1..n).map(|j| h[(i, j)]).collect();
            let d: Complex64 = row.iter().zip(&v).map(|(r, vv)| r * vv).sum();
            for (t, j) in (k + 1..n).enumerate() {
                h[(i, j)] -= d * v[t].conj() * 2.0;
            }
        }
        for i in k + 2..n {
            h[(i, k)] = ZERO;
        }
    }

    let hnorm = h.frobenius_norm();
    let cap = 100 * n.max(4);
    let mut total = 0usize;
    let mut since_deflation = 0usize;
    let mut hi = n - 1;
    while hi > 0 {
        let mut l = hi;
        while l > 0 {
            let sub = h[(l, l - 1)].norm();
            let mut s = h[(l - 1, l - 1)].norm() + h[(l, l)].norm();
            if s == 0.0 {
                s = hnorm;
            }
            if sub <= EPS * s || sub <= f64::MIN_POSITIVE {
                h[(l, l - 1)] = ZERO;
                break;
            }
            l -= 1;
        }
        if l == hi {
            hi -= 1;
            since_deflation = 0;
            continue;
        }
        total += 1;
        since_deflation += 1;
        if total > cap {
            return Err(MatError::ConvergenceFailure(cap));
        }
        let mu = if since_deflation % 11 == 10 {
            h[(hi, hi)] + Complex64::new(0.75, 0.3) * h[(hi, hi - 1)].norm()
        } else {
            let a11 = h[(hi - 1, hi - 1)];
            let a12 = h[(hi - 1, hi)];
            let a21 = h[(hi, hi - 1)];
            let a22 = h[(hi, hi)];
            let half = (a11 - a22) * 0.5;
            let disc = (half * half + a12 * a21).sqrt();
            let m1 = (a11 + a22) * 0.5 + disc;
            let m2 = (a11 + a22) * 0.5 - disc;
            if (m1 - a22).norm() <= (m2 - a22).norm() {
                m1
            } else {
                m2
            }
        };
        for k in l..=hi {
            h[(k, k)] -= mu;
        }
        let mut rots: Vec<(Complex64, Complex64)> = Vec::with_capacity(hi - l);
        for k in l..hi {
            let x = h[(k, k)];
            let y = h[(k + 1, k)];
            let r = (x.norm_sqr() + y.norm_sqr()).sqrt();
            let (c, s) = if r == 0.0 { (ONE, ZERO) } else { (x / r, y / r) };
            for j in k..=hi {
                let p = h[(k, j)];
                let q = h[(k + 1, j)];
                h[(k, j)] = c.conj() * p + s.conj() * q;
                h[(k + 1, j)] = -s * p + c * q;
            }
            rots.push((c, s));
        }
        for (t, k) in (l..hi).enumerate() {
            let (c, s) = rots[t];
            for i in l..=hi {
                let p = h[(i, k)];
                let q = h[(i, k + 1)];
                h[(i, k)] = p * c + q * s;
                h[(i, k + 1)] = -p * s.conj() + q * c.conj();
            }
        }
        for k in l..=hi {
            h[(k, k)] += mu;
        }
    }
    Ok((0..n).map(|i| h[(i, i)]).collect())
}

/// LU factorization with partial pivoting, returned packed with the pivot order.
fn lu(a: &Mat) -> Result<(Mat, Vec<usize>), MatError> {
    let n = a.dim();
    let mut m = a.clone();
    let mut piv: Vec<usize> = (0..n).collect();
    let scale = a.max_abs();
    if scale == 0.0 {
        return Err(MatError::Singular);
    }
    for k in 0..n {
        let p = (k..n).max_by(|&i, &j| m[(i, k)].norm().total_cmp(&m[(j, k)].norm()).then(j.cmp(&i))).unwrap();
        if m[(p, k)].norm() <= n as f64 * EPS * scale {
            return Err(MatError::Singular);
        }
        if p != k {
            piv.swap(p, k);
            for j in 0..n {
                let t = m[(k, j)];
                m[(k, j)] = m[(p, j)];
                m[(p, j)] = t;
            }
        }
        let d = m[(k, k)];
        for i in k + 1..n {
            let f = m[(i, k)] / d;
            m[(i, k)] = f;
            for j in k + 1..n {
                let t = m[(k, j)];
                m[(i, j)] -= f * t;
            }
        }
    }
    Ok((m, piv))
}

fn lu_solve(lu: &Mat, piv: &[usize], b: &[Complex64]) -> Vec<Complex64> {
    let n = lu.dim();
    let mut x: Vec<Complex64> = piv.iter().map(|&p| b[p]).collect();
    for i in 0..n {
        for j in 0..i {
            let t = x[j];
            x[i] -= lu[(i, j)] * t;
        }
    }
    for i in (0..n).rev() {
        for j in i + 1..n {
            let t = x[j];
            x[i] -= lu[(i, j)] * t;
        }
        x[i] /= lu[(i, i)];
    }
    x
}

/// Inverse by LU with partial pivoting.
pub fn inverse(a: &Mat) -> Result<Mat, MatError> {
    let n = a.dim();
    let (f, piv) = lu(a)?;
    let mut out = Mat::zeros(n);
    for j in 0..n {
        let mut e = vec![ZERO; n];
        e[j] = ONE;
        out.set_column(j, &lu_solve(&f, &piv, &e));
    }
    if !out.is_finite() {
        return Err(MatError::Singular);
    }
    Ok(out)
}

/// Solves `A x = b`.
pub fn solve(a: &Mat, b: &[Complex64]) -> Result<Vec<Complex64>, MatError> {
    if b.len() != a.dim() {
        return Err(MatError::DimensionMismatch { left: a.dim(), right: b.len() });
    }
    let (f, piv) = lu(a)?;
    Ok(lu_solve(&f, &piv, b))
}

/// Lower-triangular Cholesky factor of a Hermitian positive definite matrix.
pub fn cholesky(a: &Mat) -> Result<Mat, MatError> {
    let n = a.dim();
    let h = a.hermitian_part();
    let mut l = Mat::zeros(n);
    for j in 0..n {
        let mut d = h[(j, j)].re;
        for k in 0..j {
            d -= l[(j, k)].norm_sqr();
        }
        if !(d > 0.0) {
            return Err(MatError::NotPositiveDefinite);
        }
        let djj = d.sqrt();
        l[(j, j)] = Complex64::new(djj, 0.0);
        for i in j + 1..n {
            let mut s = h[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)].conj();
            }
            l[(i, j)] = s / djj;
        }
    }
    Ok(l)
}
