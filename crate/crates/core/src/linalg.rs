//! Dense kernels shared by the solvers. Matrices are column-major `DMatrix<f64>`.

use alloc::vec::Vec;
#[cfg(not(feature = "std"))]
use num_traits::Float;
use nalgebra::DMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum LinalgError {
    #[error("matrix is not numerically positive definite")]
    NotPositiveDefinite,
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// `out = A x`.
pub fn mul_vec(a: &DMatrix<f64>, x: &[f64], out: &mut [f64]) {
    let m = a.nrows();
    debug_assert_eq!(out.len(), m);
    out.iter_mut().for_each(|v| *v = 0.0);
    let data = a.as_slice();
    for (j, &xj) in x.iter().enumerate() {
        if xj != 0.0 {
            let col = &data[j * m..(j + 1) * m];
            for (o, c) in out.iter_mut().zip(col) {
                *o += xj * c;
            }
        }
    }
}

/// `out = Aᵀ v`.
pub fn mul_t_vec(a: &DMatrix<f64>, v: &[f64], out: &mut [f64]) {
    let m = a.nrows();
    debug_assert_eq!(out.len(), a.ncols());
    let data = a.as_slice();
    for (j, o) in out.iter_mut().enumerate() {
        *o = dot(&data[j * m..(j + 1) * m], v);
    }
}

pub fn column(a: &DMatrix<f64>, j: usize) -> &[f64] {
    let m = a.nrows();
    &a.as_slice()[j * m..(j + 1) * m]
}

pub fn column_norms_sq(a: &DMatrix<f64>) -> Vec<f64> {
    (0..a.ncols()).map(|j| {
        let c = column(a, j);
        dot(c, c)
    })
    .collect()
}

/// `A Aᵀ + shift·I`.
pub fn outer_gram(a: &DMatrix<f64>, shift: f64) -> DMatrix<f64> {
    let mut g = a * a.transpose();
    for i in 0..g.nrows() {
        g[(i, i)] += shift;
    }
    g
}

/// Cholesky factor with allocation-free solves.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    l: DMatrix<f64>,
}

impl SpdFactor {
    pub fn new(mat: DMatrix<f64>) -> Result<Self, LinalgError> {
        let n = mat.nrows();
        let chol = mat.cholesky().ok_or(LinalgError::NotPositiveDefinite)?;
        let l = chol.unpack();
        for i in 0..n {
            let d = l[(i, i)];
            if !(d.is_finite() && d > 0.0) {
                return Err(LinalgError::NotPositiveDefinite);
            }
        }
        Ok(Self { l })
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    /// Overwrites `b` with `(L Lᵀ)⁻¹ b`.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.l.nrows();
        let l = self.l.as_slice();
        // Forward: L z = b, column oriented.
        for j in 0..n {
            let col = &l[j * n..(j + 1) * n];
            b[j] /= col[j];
            let bj = b[j];
            for i in j + 1..n {
                b[i] -= col[i] * bj;
            }
        }
        // Backward: Lᵀ x = z, using columns of L as rows of Lᵀ.
        for j in (0..n).rev() {
            let col = &l[j * n..(j + 1) * n];
            let mut s = b[j];
            for i in j + 1..n {
                s -= col[i] * b[i];
            }
            b[j] = s / col[j];
        }
    }

    /// `ln det` of the factored matrix.
    pub fn ln_det(&self) -> f64 {
        (0..self.l.nrows()).map(|i| 2.0 * self.l[(i, i)].ln()).sum()
    }

    /// Diagonal of the inverse restricted to quadratic forms `vᵀ A⁻¹ v` per column of `v`.
    pub fn inv_quad_columns(&self, v: &DMatrix<f64>) -> Vec<f64> {
        let n = self.l.nrows();
        let l = self.l.as_slice();
        let mut buf = alloc::vec![0.0; n];
        (0..v.ncols())
            .map(|j| {
                buf.copy_from_slice(column(v, j));
                // Only the forward solve is needed: vᵀ (L Lᵀ)⁻¹ v = ‖L⁻¹ v‖².
                for c in 0..n {
                    let col = &l[c * n..(c + 1) * n];
                    buf[c] /= col[c];
                    let bc = buf[c];
                    for i in c + 1..n {
                        buf[i] -= col[i] * bc;
                    }
                }
                dot(&buf, &buf)
            })
            .collect()
    }
}
