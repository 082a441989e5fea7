//! Small dense linear-algebra helpers shared by the solvers.

use nalgebra::{DMatrix, DVector};

// Same cutoff as LAPACK-style `rcond = None`: sigma_max * max(m, n) * eps.
fn rank_tol(sv: &DVector<f64>, rows: usize, cols: usize) -> f64 {
    let smax = sv.iter().cloned().fold(0.0_f64, f64::max);
    smax * (rows.max(cols) as f64) * f64::EPSILON
}

/// Minimum-norm least-squares solution of `a x = b`.
///
/// Rank-deficient systems are handled by truncating tiny singular values, so
/// the result is the pseudo-inverse solution.
pub fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let (m, n) = a.shape();
    if n == 0 {
        return DVector::zeros(0);
    }
    if m == 0 {
        return DVector::zeros(n);
    }
    let svd = a.clone().svd(true, true);
    let tol = rank_tol(&svd.singular_values, m, n);
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let utb = u.tr_mul(b);
    let mut scaled = DVector::zeros(svd.singular_values.len());
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > tol {
            scaled[i] = utb[i] / s;
        }
    }
    v_t.transpose() * scaled
}

/// Least squares restricted to a subset of columns; entries outside `cols`
/// are exactly zero in the returned vector.
pub fn lstsq_subset(a: &DMatrix<f64>, b: &DVector<f64>, cols: &[usize]) -> DVector<f64> {
    let mut out = DVector::zeros(a.ncols());
    if cols.is_empty() {
        return out;
    }
    let sub = a.select_columns(cols);
    let x = lstsq(&sub, b);
    for (k, &j) in cols.iter().enumerate() {
        out[j] = x[k];
    }
    out
}

/// Least squares on a column subset from precomputed normal equations
/// (`gram = A^T A`, `atb = A^T b`), using an eigen pseudo-inverse of the
/// sub-Gram matrix. Entries outside `cols` are exactly zero.
pub fn lstsq_gram(gram: &DMatrix<f64>, atb: &DVector<f64>, cols: &[usize]) -> DVector<f64> {
    let mut out = DVector::zeros(gram.ncols());
    if cols.is_empty() {
        return out;
    }
    let g = gram.select_rows(cols).select_columns(cols);
    let b = DVector::from_iterator(cols.len(), cols.iter().map(|&j| atb[j]));
    let eig = g.symmetric_eigen();
    let lmax = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
    let tol = lmax * cols.len() as f64 * 1e-14;
    let proj = eig.eigenvectors.transpose() * b;
    let scaled = DVector::from_iterator(
        proj.len(),
        proj.iter()
            .zip(eig.eigenvalues.iter())
            .map(|(p, &l)| if l > tol { p / l } else { 0.0 }),
    );
    let x = eig.eigenvectors * scaled;
    for (k, &j) in cols.iter().enumerate() {
        out[j] = x[k];
    }
    out
}

/// Orthonormal basis for the column space of `a` (rank-revealing, via SVD).
pub fn orth(a: &DMatrix<f64>) -> DMatrix<f64> {
    let (m, n) = a.shape();
    if n == 0 || m == 0 {
        return DMatrix::zeros(m, 0);
    }
    let svd = a.clone().svd(true, false);
    let tol = rank_tol(&svd.singular_values, m, n);
    let u = svd.u.expect("u requested");
    let keep: Vec<usize> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > tol)
        .map(|(i, _)| i)
        .collect();
    u.select_columns(&keep)
}

/// Squared norm of the projection of `r` onto `span(z)` after removing the
/// part of `span(z)` inside `span(q)`; `r` must already be orthogonal to the
/// orthonormal basis `q`. Directions of `z` with relative energy below
/// `1e-12` are treated as absent.
pub fn explained_by_extra(q: &DMatrix<f64>, z: &DMatrix<f64>, r: &DVector<f64>) -> f64 {
    if z.ncols() == 0 {
        return 0.0;
    }
    let ztr = z.tr_mul(r);
    let mut gram = z.tr_mul(z);
    let total = gram.trace();
    if total <= 0.0 {
        return 0.0;
    }
    if q.ncols() > 0 {
        let qtz = q.tr_mul(z);
        gram -= qtz.tr_mul(&qtz);
    }
    let eig = gram.symmetric_eigen();
    let tol = 1e-12 * total;
    let proj = eig.eigenvectors.transpose() * ztr;
    eig.eigenvalues
        .iter()
        .zip(proj.iter())
        .filter(|(l, _)| **l > tol)
        .map(|(l, p)| p * p / l)
        .sum()
}

/// Residual of `b` after projection onto the orthonormal basis `q`.
pub fn residual_after(q: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    if q.ncols() == 0 {
        return b.clone();
    }
    b - q * q.tr_mul(b)
}

/// Euclidean norm of every column.
pub fn column_norms(a: &DMatrix<f64>) -> Vec<f64> {
    a.column_iter().map(|c| c.norm()).collect()
}

/// Absolute cosine similarity; zero when either vector vanishes.
pub fn abs_cosine(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let na = a.norm();
    let nb = b.norm();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (a.dot(b) / (na * nb)).abs().min(1.0)
}
