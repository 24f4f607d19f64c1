//! Dense linear-algebra helpers on top of `faer`.
//!
//! The central routine is [`ols`], the minimum-norm least-squares solver used by
//! every linear fit in the crate. Well-conditioned problems go through the
//! normal equations (Cholesky of the smaller Gram matrix plus one refinement
//! step); anything the Cholesky factor flags as ill-conditioned falls back to a
//! thin SVD with relative singular-value cutoff [`SVD_CUTOFF`].

use faer::linalg::solvers::Solve;
use faer::{Col, Mat, MatRef, Side};
use serde::{Deserialize, Serialize};

use crate::error::{argument, Error, Result};

/// Relative singular-value cutoff for rank determination.
pub const SVD_CUTOFF: f64 = 1e-10;

/// Smallest accepted ratio between the smallest and largest Cholesky pivot
/// before the SVD route is taken. Squared, this bounds the condition number of
/// the Gram matrix from below by 1e8.
const CHOL_PIVOT_RATIO: f64 = 1e-4;

/// Row-major dense matrix used for model parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        crate::error::check_len("matrix data", rows * cols, data.len())?;
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        Self::from_fn(n, n, |i, j| if i == j { values[i] } else { 0.0 })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn scale(&self, c: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * c).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn to_faer(&self) -> Mat<f64> {
        Mat::from_fn(self.rows, self.cols, |i, j| self.get(i, j))
    }

    /// `y = self * x`
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    /// `y = selfᵀ * x`, i.e. the row vector `xᵀ self`.
    pub fn tmul_vec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (i, &xi) in x.iter().enumerate() {
            if xi != 0.0 {
                axpy(xi, self.row(i), &mut out);
            }
        }
        out
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn col_from(v: &[f64]) -> Col<f64> {
    Col::from_fn(v.len(), |i| v[i])
}

pub fn col_to_vec(c: &Col<f64>) -> Vec<f64> {
    (0..c.nrows()).map(|i| c[i]).collect()
}

/// `Z θ` for a design stored as an `n × D` faer matrix.
pub fn mat_vec(z: MatRef<'_, f64>, theta: &[f64]) -> Vec<f64> {
    let out = z * col_from(theta);
    col_to_vec(&out)
}

/// `Zᵀ r`.
pub fn mat_tvec(z: MatRef<'_, f64>, r: &[f64]) -> Vec<f64> {
    let out = z.transpose() * col_from(r);
    col_to_vec(&out)
}

fn all_finite(z: MatRef<'_, f64>) -> bool {
    (0..z.ncols()).all(|j| (0..z.nrows()).all(|i| z[(i, j)].is_finite()))
}

/// A factorization of a design matrix `Z` (n × D) that yields minimum-norm
/// least-squares solutions and orthogonal projections onto `range(Z)`.
pub struct LeastSquares<'a> {
    z: MatRef<'a, f64>,
    kind: Factor,
}

enum Factor {
    /// `Zᵀ Z` is well conditioned (n ≥ D).
    TallNormal(faer::linalg::solvers::Llt<f64>),
    /// `Z Zᵀ` is well conditioned (n < D): full row rank.
    WideNormal(faer::linalg::solvers::Llt<f64>),
    Svd {
        u: Mat<f64>,
        v: Mat<f64>,
        inv_s: Vec<f64>,
    },
    /// Either dimension is zero or Z vanishes.
    Empty,
}

impl<'a> LeastSquares<'a> {
    pub fn new(z: MatRef<'a, f64>) -> Result<Self> {
        if !all_finite(z) {
            return Err(argument("design matrix has non-finite entries"));
        }
        let (n, d) = (z.nrows(), z.ncols());
        if n == 0 || d == 0 {
            return Ok(Self {
                z,
                kind: Factor::Empty,
            });
        }
        let gram = if n >= d {
            z.transpose() * z
        } else {
            z * z.transpose()
        };
        if let Ok(llt) = gram.llt(Side::Lower) {
            let l = llt.L();
            let k = l.nrows();
            let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
            for i in 0..k {
                let v = l[(i, i)].abs();
                lo = lo.min(v);
                hi = hi.max(v);
            }
            if hi > 0.0 && lo / hi > CHOL_PIVOT_RATIO {
                let kind = if n >= d {
                    Factor::TallNormal(llt)
                } else {
                    Factor::WideNormal(llt)
                };
                return Ok(Self { z, kind });
            }
        }
        Self::svd(z)
    }

    /// Forces the rank-revealing SVD route.
    pub fn svd(z: MatRef<'a, f64>) -> Result<Self> {
        if !all_finite(z) {
            return Err(argument("design matrix has non-finite entries"));
        }
        if z.nrows() == 0 || z.ncols() == 0 {
            return Ok(Self {
                z,
                kind: Factor::Empty,
            });
        }
        let svd = z
            .thin_svd()
            .map_err(|e| Error::Internal(format!("svd failed to converge: {e:?}")))?;
        let s = svd.S().column_vector();
        let smax = if s.nrows() > 0 { s[0] } else { 0.0 };
        if smax == 0.0 {
            return Ok(Self {
                z,
                kind: Factor::Empty,
            });
        }
        let rank = (0..s.nrows())
            .take_while(|&i| s[i] > SVD_CUTOFF * smax)
            .count();
        let u = svd.U().subcols(0, rank).to_owned();
        let v = svd.V().subcols(0, rank).to_owned();
        let inv_s = (0..rank).map(|i| 1.0 / s[i]).collect();
        Ok(Self {
            z,
            kind: Factor::Svd { u, v, inv_s },
        })
    }

    pub fn uses_svd(&self) -> bool {
        matches!(self.kind, Factor::Svd { .. })
    }

    /// Numerical rank of the design.
    pub fn rank(&self) -> usize {
        match &self.kind {
            Factor::TallNormal(_) => self.z.ncols(),
            Factor::WideNormal(_) => self.z.nrows(),
            Factor::Svd { inv_s, .. } => inv_s.len(),
            Factor::Empty => 0,
        }
    }

    /// Minimum-norm minimizer of `‖y − Zθ‖₂`.
    pub fn solve(&self, y: &[f64]) -> Result<Vec<f64>> {
        crate::error::check_len("least-squares rhs", self.z.nrows(), y.len())?;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(argument("right-hand side has non-finite entries"));
        }
        let z = self.z;
        let theta = match &self.kind {
            Factor::Empty => vec![0.0; z.ncols()],
            Factor::TallNormal(llt) => {
                let yc = col_from(y);
                let mut theta = llt.solve(z.transpose() * &yc);
                // one step of refinement against the true residual
                let resid = &yc - z * &theta;
                theta += llt.solve(z.transpose() * &resid);
                col_to_vec(&theta)
            }
            Factor::WideNormal(llt) => {
                let yc = col_from(y);
                let mut alpha = llt.solve(&yc);
                let resid = &yc - z * (z.transpose() * &alpha);
                alpha += llt.solve(&resid);
                col_to_vec(&(z.transpose() * &alpha))
            }
            Factor::Svd { u, v, inv_s } => {
                let mut coef = u.transpose() * col_from(y);
                for (i, s) in inv_s.iter().enumerate() {
                    coef[i] *= s;
                }
                col_to_vec(&(v * &coef))
            }
        };
        Ok(theta)
    }

    /// Orthogonal projection of every column of `m` (n × k) onto `range(Z)`.
    pub fn project(&self, m: MatRef<'_, f64>) -> Mat<f64> {
        let z = self.z;
        match &self.kind {
            Factor::Empty => Mat::zeros(m.nrows(), m.ncols()),
            Factor::TallNormal(llt) => {
                let coef = llt.solve(z.transpose() * m);
                z * coef
            }
            Factor::WideNormal(_) => m.to_owned(),
            Factor::Svd { u, .. } => u * (u.transpose() * m),
        }
    }
}

/// Minimum-norm least squares: `argmin ‖y − Zθ‖₂` with the smallest `‖θ‖₂`.
pub fn ols(z: MatRef<'_, f64>, y: &[f64]) -> Result<Vec<f64>> {
    LeastSquares::new(z)?.solve(y)
}

/// Least squares on a small symmetric positive semi-definite system given in
/// normal-equation form, `(Mᵀ M) β = Mᵀ y`, returning the minimum-norm solution.
pub fn solve_psd(gram: MatRef<'_, f64>, rhs: &[f64]) -> Result<Vec<f64>> {
    let k = gram.nrows();
    if let Ok(llt) = gram.llt(Side::Lower) {
        let l = llt.L();
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for i in 0..k {
            lo = lo.min(l[(i, i)].abs());
            hi = hi.max(l[(i, i)].abs());
        }
        if hi > 0.0 && lo / hi > CHOL_PIVOT_RATIO {
            return Ok(col_to_vec(&llt.solve(col_from(rhs))));
        }
    }
    let evd = gram
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Internal(format!("eigendecomposition failed: {e:?}")))?;
    let s = evd.S().column_vector();
    let u = evd.U();
    let lmax = (0..k).map(|i| s[i].abs()).fold(0.0, f64::max);
    let mut out = vec![0.0; k];
    if lmax == 0.0 {
        return Ok(out);
    }
    let cut = 1e-13 * lmax;
    for i in 0..k {
        if s[i] > cut {
            let c: f64 = (0..k).map(|r| u[(r, i)] * rhs[r]).sum::<f64>() / s[i];
            for (r, o) in out.iter_mut().enumerate() {
                *o += c * u[(r, i)];
            }
        }
    }
    Ok(out)
}
