//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Eigenvalues and unit-norm right eigenvectors (columns) of a real matrix.
///
/// Uses the complex Schur form and back substitution on the triangular
/// factor.
pub fn eig(m: &DMatrix<f64>) -> Result<(Vec<Complex64>, DMatrix<Complex64>)> {
    let n = m.nrows();
    if n != m.ncols() {
        return Err(Error::Dimension("eigenproblem needs a square matrix".into()));
    }
    if n == 0 {
        return Ok((Vec::new(), DMatrix::zeros(0, 0)));
    }
    if !m.iter().all(|v| v.is_finite()) {
        return Err(Error::Eigen("matrix has non-finite entries".into()));
    }
    let mc = m.map(|v| Complex64::new(v, 0.0));
    let schur = nalgebra::linalg::Schur::try_new(mc, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Eigen("Schur iteration did not converge".into()))?;
    let (q, t) = schur.unpack();
    let values: Vec<Complex64> = (0..n).map(|i| t[(i, i)]).collect();
    let tnorm = t.iter().fold(0.0f64, |a, v| a.max(v.norm())).max(f64::MIN_POSITIVE);
    let small = f64::EPSILON * tnorm;
    let mut vectors = DMatrix::zeros(n, n);
    for k in 0..n {
        let lam = values[k];
        let mut y = DVector::<Complex64>::zeros(n);
        y[k] = Complex64::new(1.0, 0.0);
        for i in (0..k).rev() {
            let mut s = Complex64::new(0.0, 0.0);
            for j in i + 1..=k {
                s += t[(i, j)] * y[j];
            }
            let mut d = t[(i, i)] - lam;
            if d.norm() < small {
                d = Complex64::new(small, 0.0);
            }
            y[i] = -s / d;
        }
        let v = &q * y;
        let norm = v.norm();
        vectors.set_column(k, &(v / Complex64::new(norm, 0.0)));
    }
    Ok((values, vectors))
}

/// Solve `a x = b` by LU; `None` when `a` is numerically singular.
pub fn solve(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let lu = a.clone().lu();
    let x = lu.solve(b)?;
    if x.iter().all(|v| v.is_finite()) {
        Some(x)
    } else {
        None
    }
}

/// Reciprocal condition estimate from singular values.
pub fn rcond(a: &DMatrix<f64>) -> f64 {
    let sv = a.clone().singular_values();
    let max = sv.max();
    if max == 0.0 {
        return 0.0;
    }
    sv.min() / max
}

/// Matrix inverse with a conditioning guard.
pub fn inverse_checked(a: &DMatrix<f64>, min_rcond: f64) -> Option<DMatrix<f64>> {
    if rcond(a) < min_rcond {
        return None;
    }
    a.clone().try_inverse()
}

/// Complex matrix inverse with a conditioning guard.
pub fn complex_inverse(a: &DMatrix<Complex64>, min_rcond: f64) -> Option<DMatrix<Complex64>> {
    let sv = a.clone().singular_values();
    let max = sv.max();
    if max == 0.0 || sv.min() / max < min_rcond {
        return None;
    }
    a.clone().try_inverse()
}

/// Sample quantile (linear interpolation between order statistics).
pub fn quantile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    v[lo] * (1.0 - frac) + v[hi] * frac
}
