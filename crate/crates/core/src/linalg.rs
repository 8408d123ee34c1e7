//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

pub(crate) fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let m = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = m;
            a[(j, i)] = m;
        }
    }
}

/// Eigen-decomposition of a symmetric matrix with eigenvalues sorted ascending.
pub(crate) fn sym_eigen(a: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = a.nrows();
    if n == 0 {
        return (DVector::zeros(0), DMatrix::zeros(0, 0));
    }
    let eig = SymmetricEigen::new(a.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let vals = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vecs = DMatrix::zeros(n, n);
    for (k, &i) in order.iter().enumerate() {
        vecs.set_column(k, &eig.eigenvectors.column(i));
    }
    (vals, vecs)
}

pub(crate) fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    let (vals, _) = sym_eigen(a);
    vals.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Orthonormal basis of the column span of `a`, dropping singular values at
/// or below `tol`.
pub(crate) fn orthonormal_basis(a: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let (rows, cols) = a.shape();
    if cols == 0 || rows == 0 {
        return DMatrix::zeros(rows, 0);
    }
    let svd = a.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > tol)
        .collect();
    let mut basis = DMatrix::zeros(rows, keep.len());
    for (k, &i) in keep.iter().enumerate() {
        basis.set_column(k, &u.column(i));
    }
    basis
}

/// Moore-Penrose inverse of a symmetric PSD matrix, treating eigenvalues at or
/// below `rel_tol * max` as zero.
pub(crate) fn pinv_sym(a: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let (vals, vecs) = sym_eigen(a);
    let top = vals.iter().copied().fold(0.0_f64, f64::max);
    let cut = rel_tol * top;
    let n = a.nrows();
    let mut out = DMatrix::zeros(n, n);
    for k in 0..n {
        if vals[k] > cut {
            let v = vecs.column(k);
            out += (v * v.transpose()) / vals[k];
        }
    }
    symmetrize(&mut out);
    out
}

/// Symmetric square root of a PSD matrix; negative round-off eigenvalues are
/// clamped to zero.
pub(crate) fn sqrt_psd(a: &DMatrix<f64>) -> DMatrix<f64> {
    let (vals, vecs) = sym_eigen(a);
    let s = DVector::from_iterator(vals.len(), vals.iter().map(|&v| v.max(0.0).sqrt()));
    let mut out = &vecs * DMatrix::from_diagonal(&s) * vecs.transpose();
    symmetrize(&mut out);
    out
}

/// Minimum-norm least-squares solution of `a x = b`.
pub(crate) fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>, rel_tol: f64) -> DVector<f64> {
    if a.ncols() == 0 {
        return DVector::zeros(0);
    }
    let svd = a.clone().svd(true, true);
    let top = svd.singular_values.iter().copied().fold(0.0_f64, f64::max);
    let eps = (rel_tol * top).max(f64::MIN_POSITIVE);
    svd.solve(b, eps).expect("both factors requested")
}

pub(crate) fn quad_form(a: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    x.dot(&(a * x))
}
