use std::fmt;
use std::ops::{Add, Index, IndexMut, Mul, Neg, Sub};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::MatError;

/// Largest supported dimension.
pub const MAX_DIM: usize = 64;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Square complex matrix, row-major.
///
/// Real matrices are stored with zero imaginary parts. Entries are finite
/// on construction through the checked constructors; arithmetic does not
/// re-check.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    dim: usize,
    data: Vec<Complex64>,
}

impl Mat {
    fn check_dim(dim: usize) -> Result<(), MatError> {
        if dim == 0 || dim > MAX_DIM {
            return Err(MatError::InvalidDimension(dim));
        }
        Ok(())
    }

    pub fn zeros(dim: usize) -> Self {
        assert!((1..=MAX_DIM).contains(&dim), "matrix dimension {dim} out of range");
        Self { dim, data: vec![ZERO; dim * dim] }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = ONE;
        }
        m
    }

    /// Builds a matrix from complex entries in row-major order.
    pub fn from_complex(dim: usize, data: Vec<Complex64>) -> Result<Self, MatError> {
        Self::check_dim(dim)?;
        if data.len() != dim * dim {
            return Err(MatError::DataLength { expected: dim * dim, got: data.len() });
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(MatError::NonFinite);
        }
        Ok(Self { dim, data })
    }

    /// Builds a real matrix from row-major entries.
    pub fn from_real(dim: usize, data: &[f64]) -> Result<Self, MatError> {
        Self::from_complex(dim, data.iter().map(|&x| Complex64::new(x, 0.0)).collect())
    }

    /// Builds a real matrix from rows. Panics on ragged or non-finite input.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let dim = rows.len();
        let mut data = Vec::with_capacity(dim * dim);
        for r in rows {
            assert_eq!(r.len(), dim, "ragged rows");
            data.extend_from_slice(r);
        }
        Self::from_real(dim, &data).expect("invalid matrix rows")
    }

    pub fn diag_real(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = Complex64::new(v, 0.0);
        }
        m
    }

    pub fn diag(values: &[Complex64]) -> Self {
        let mut m = Self::zeros(values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// True when every imaginary part is exactly zero.
    pub fn is_real(&self) -> bool {
        self.data.iter().all(|z| z.im == 0.0)
    }

    pub fn real_part(&self) -> Self {
        Self { dim: self.dim, data: self.data.iter().map(|z| Complex64::new(z.re, 0.0)).collect() }
    }

    pub fn adjoint(&self) -> Self {
        let n = self.dim;
        let mut out = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                out.data[j * n + i] = self.data[i * n + j].conj();
            }
        }
        out
    }

    pub fn transpose(&self) -> Self {
        let n = self.dim;
        let mut out = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                out.data[j * n + i] = self.data[i * n + j];
            }
        }
        out
    }

    /// (A + A*) / 2
    pub fn hermitian_part(&self) -> Self {
        let adj = self.adjoint();
        let mut out = self.clone();
        for (a, b) in out.data.iter_mut().zip(adj.data.iter()) {
            *a = (*a + *b) * 0.5;
        }
        out
    }

    pub fn scale(&self, s: f64) -> Self {
        Self { dim: self.dim, data: self.data.iter().map(|z| z * s).collect() }
    }

    pub fn scale_complex(&self, s: Complex64) -> Self {
        Self { dim: self.dim, data: self.data.iter().map(|z| z * s).collect() }
    }

    /// self += s * other
    pub fn axpy(&mut self, s: Complex64, other: &Mat) {
        debug_assert_eq!(self.dim, other.dim);
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += s * b;
        }
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.dim).map(|i| self.data[i * self.dim + i]).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Induced 1-norm (max column sum); cheap upper bound for scaling decisions.
    pub fn norm_one(&self) -> f64 {
        let n = self.dim;
        (0..n).map(|j| (0..n).map(|i| self.data[i * n + j].norm()).sum::<f64>()).fold(0.0, f64::max)
    }

    pub fn matvec(&self, v: &[Complex64]) -> Vec<Complex64> {
        let mut out = vec![ZERO; self.dim];
        self.matvec_into(v, &mut out);
        out
    }

    pub fn matvec_into(&self, v: &[Complex64], out: &mut [Complex64]) {
        let n = self.dim;
        debug_assert_eq!(v.len(), n);
        for i in 0..n {
            let row = &self.data[i * n..(i + 1) * n];
            out[i] = row.iter().zip(v).map(|(a, b)| a * b).sum();
        }
    }

    pub fn column(&self, j: usize) -> Vec<Complex64> {
        (0..self.dim).map(|i| self.data[i * self.dim + j]).collect()
    }

    pub fn set_column(&mut self, j: usize, col: &[Complex64]) {
        for (i, &c) in col.iter().enumerate() {
            self.data[i * self.dim + j] = c;
        }
    }

    pub fn try_add(&self, other: &Mat) -> Result<Mat, MatError> {
        self.same_dim(other)?;
        Ok(self + other)
    }

    pub fn try_mul(&self, other: &Mat) -> Result<Mat, MatError> {
        self.same_dim(other)?;
        Ok(self * other)
    }

    fn same_dim(&self, other: &Mat) -> Result<(), MatError> {
        if self.dim != other.dim {
            return Err(MatError::DimensionMismatch { left: self.dim, right: other.dim });
        }
        Ok(())
    }
}

impl Index<(usize, usize)> for Mat {
    type Output = Complex64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &Complex64 {
        &self.data[i * self.dim + j]
    }
}

impl IndexMut<(usize, usize)> for Mat {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex64 {
        &mut self.data[i * self.dim + j]
    }
}

impl<'a> Add<&'a Mat> for &'a Mat {
    type Output = Mat;

    fn add(self, rhs: &'a Mat) -> Mat {
        assert_eq!(self.dim, rhs.dim, "dimension mismatch");
        Mat { dim: self.dim, data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect() }
    }
}

impl<'a> Sub<&'a Mat> for &'a Mat {
    type Output = Mat;

    fn sub(self, rhs: &'a Mat) -> Mat {
        assert_eq!(self.dim, rhs.dim, "dimension mismatch");
        Mat { dim: self.dim, data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect() }
    }
}

impl<'a> Mul<&'a Mat> for &'a Mat {
    type Output = Mat;

    fn mul(self, rhs: &'a Mat) -> Mat {
        assert_eq!(self.dim, rhs.dim, "dimension mismatch");
        let n = self.dim;
        let mut out = Mat::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self.data[i * n + k];
                if a == ZERO {
                    continue;
                }
                for j in 0..n {
                    out.data[i * n + j] += a * rhs.data[k * n + j];
                }
            }
        }
        out
    }
}

impl Neg for &Mat {
    type Output = Mat;

    fn neg(self) -> Mat {
        self.scale(-1.0)
    }
}

impl fmt::Debug for Mat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Mat({}x{}) [", self.dim, self.dim)?;
        for i in 0..self.dim {
            write!(f, "  ")?;
            for j in 0..self.dim {
                let z = self[(i, j)];
                if z.im == 0.0 {
                    write!(f, "{:>12.6} ", z.re)?;
                } else {
                    write!(f, "{:>12.6}{:+.6}i ", z.re, z.im)?;
                }
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

/// Euclidean norm of a complex vector.
pub fn vec_norm(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Hermitian inner product `sum v_i conj(w_i)`.
pub fn vec_dot(v: &[Complex64], w: &[Complex64]) -> Complex64 {
    v.iter().zip(w).map(|(a, b)| a * b.conj()).sum()
}
