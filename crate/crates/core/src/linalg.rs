//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

/// Largest condition number accepted before a system is declared singular.
pub const CONDITION_LIMIT: f64 = 1e12;

/// 2-norm condition number from singular values; infinite when singular.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 1.0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 || !min.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Scales each column to unit Euclidean norm (zero columns stay zero) so the
/// condition number measures collinearity rather than units.
pub fn column_scaled(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for mut col in out.column_iter_mut() {
        let norm = col.norm();
        if norm > 0.0 {
            col /= norm;
        }
    }
    out
}

/// Least-squares / linear solve through the SVD.
pub fn svd_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let svd = a.clone().svd(true, true);
    let tol = svd.singular_values.max() * f64::EPSILON * a.nrows().max(a.ncols()) as f64;
    svd.solve(b, tol).expect("both factors were computed")
}

/// Square solve through the SVD followed by a few rounds of iterative
/// refinement; near-singular estimating equations otherwise lose several
/// digits to the factorisation.
pub fn refined_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let svd = a.clone().svd(true, true);
    let tol = svd.singular_values.max() * f64::EPSILON * a.nrows().max(a.ncols()) as f64;
    let mut x = svd.solve(b, tol).expect("both factors were computed");
    for _ in 0..3 {
        let r = b - a * &x;
        let dx = svd.solve(&r, tol).expect("both factors were computed");
        if !dx.iter().all(|v| v.is_finite()) {
            break;
        }
        x += &dx;
    }
    x
}

/// Inverse through the SVD, for matrices already known to be well conditioned.
pub fn svd_inverse(a: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = a.clone().svd(true, true);
    let tol = svd.singular_values.max() * f64::EPSILON * a.nrows() as f64;
    svd.pseudo_inverse(tol).expect("both factors were computed")
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn max_abs(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |a, x| a.max(x.abs()))
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().symmetric_eigen().eigenvalues.min()
}
