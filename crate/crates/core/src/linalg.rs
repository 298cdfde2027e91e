//! Small dense linear-algebra helpers shared by the estimators.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Cholesky pivots below this fraction of the largest diagonal entry are
/// treated as a failed factorization.
const PIVOT_RTOL: f64 = 1e-13;
const JITTER_SCALE: f64 = 1e-10;
/// Matrices whose smallest eigenvalue is below this fraction of the largest
/// diagonal entry are rank-deficient, not borderline, and are not rescued.
const RANK_RTOL: f64 = 1e-15;

/// `(1/n) XᵀX`.
pub fn gram(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows().max(1) as f64;
    x.tr_mul(x) / n
}

/// `(1/n) Xᵀy`.
pub fn cross(x: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    let n = x.nrows().max(1) as f64;
    x.tr_mul(y) / n
}

/// Column means of `m`, summed row by row in index order.
pub fn column_means(m: &DMatrix<f64>) -> DVector<f64> {
    let n = m.nrows();
    let mut out = DVector::zeros(m.ncols());
    for j in 0..m.ncols() {
        let mut acc = 0.0;
        for i in 0..n {
            acc += m[(i, j)];
        }
        out[j] = if n == 0 { 0.0 } else { acc / n as f64 };
    }
    out
}

/// Column means restricted to `rows`.
pub fn column_means_of(m: &DMatrix<f64>, rows: &[usize]) -> DVector<f64> {
    let mut out = DVector::zeros(m.ncols());
    if rows.is_empty() {
        return out;
    }
    for j in 0..m.ncols() {
        let mut acc = 0.0;
        for &i in rows {
            acc += m[(i, j)];
        }
        out[j] = acc / rows.len() as f64;
    }
    out
}

pub fn select_rows(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), m.ncols(), |i, j| m[(rows[i], j)])
}

pub fn select_entries(v: &DVector<f64>, rows: &[usize]) -> DVector<f64> {
    DVector::from_fn(rows.len(), |i, _| v[rows[i]])
}

pub fn select_columns(m: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), cols.len(), |i, j| m[(i, cols[j])])
}

/// Horizontal concatenation `[a | b]`.
pub fn hstack(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(a.nrows(), b.nrows());
    let pa = a.ncols();
    DMatrix::from_fn(a.nrows(), pa + b.ncols(), |i, j| {
        if j < pa {
            a[(i, j)]
        } else {
            b[(i, j - pa)]
        }
    })
}

pub fn all_finite<'a>(values: impl IntoIterator<Item = &'a f64>) -> bool {
    values.into_iter().all(|v| v.is_finite())
}

fn try_cholesky(g: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    let chol = Cholesky::new(g.clone())?;
    let l = chol.l_dirty();
    let max_diag = g.diagonal().iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let min_pivot = (0..g.nrows())
        .map(|i| l[(i, i)] * l[(i, i)])
        .fold(f64::INFINITY, f64::min);
    if min_pivot.is_finite() && min_pivot > PIVOT_RTOL * max_diag.max(f64::MIN_POSITIVE) {
        Some(chol)
    } else {
        None
    }
}

/// Factorizes a symmetric positive-definite matrix.
///
/// On a failed factorization the diagonal is jittered once by
/// `1e-10 · trace(G)/p`. The jitter is only accepted when `G` is not
/// numerically rank-deficient; otherwise the smallest eigenvalue of `G` is
/// reported as the offending pivot.
pub fn spd_factor(g: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    if g.nrows() != g.ncols() {
        return Err(Error::shape(format!(
            "gram matrix is {}x{}",
            g.nrows(),
            g.ncols()
        )));
    }
    if !all_finite(g.iter()) {
        return Err(Error::NonFinite("gram matrix".into()));
    }
    if let Some(c) = try_cholesky(g) {
        return Ok(c);
    }
    let min_eig = smallest_eigenvalue(g);
    let max_diag = g.diagonal().iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    if !(min_eig > RANK_RTOL * max_diag) {
        return Err(Error::Singular { pivot: min_eig });
    }
    let p = g.nrows().max(1) as f64;
    let jitter = JITTER_SCALE * g.trace() / p;
    let mut jittered = g.clone();
    for i in 0..g.nrows() {
        jittered[(i, i)] += jitter;
    }
    try_cholesky(&jittered).ok_or(Error::Singular { pivot: min_eig })
}

pub fn spd_solve(g: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    if b.len() != g.nrows() {
        return Err(Error::shape(format!(
            "right-hand side has length {}, gram is {}x{}",
            b.len(),
            g.nrows(),
            g.ncols()
        )));
    }
    Ok(spd_factor(g)?.solve(b))
}

pub fn spd_inverse(g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(spd_factor(g)?.inverse())
}

pub fn smallest_eigenvalue(g: &DMatrix<f64>) -> f64 {
    if g.nrows() == 0 {
        return 0.0;
    }
    let sym = (g + g.transpose()) * 0.5;
    SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |a, &b| a.min(b))
}

/// Symmetric and positive semi-definite up to `tol` (relative to the largest
/// absolute entry).
pub fn is_symmetric_psd(m: &DMatrix<f64>, tol: f64) -> bool {
    if m.nrows() != m.ncols() {
        return false;
    }
    let scale = m.iter().fold(0.0f64, |a, &b| a.max(b.abs())).max(1.0);
    for i in 0..m.nrows() {
        for j in 0..i {
            if (m[(i, j)] - m[(j, i)]).abs() > tol * scale {
                return false;
            }
        }
    }
    smallest_eigenvalue(m) >= -tol * scale
}

pub fn max_abs(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0f64, |a, &b| a.max(b.abs()))
}
