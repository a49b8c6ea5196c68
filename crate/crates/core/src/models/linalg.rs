//! Dense symmetric positive-definite solve for the ridge normal equations.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

/// Solves `a x = b` for symmetric positive-definite `a` by Cholesky
/// factorization `a = L Lᵀ`.
pub fn cholesky_solve(a: &Array2<f64>, b: &Array1<f64>) -> Result<Array1<f64>> {
    let d = a.nrows();
    if a.ncols() != d || b.len() != d {
        return Err(Error::Solver("dimension mismatch".into()));
    }
    let max_diag = (0..d).map(|i| a[[i, i]].abs()).fold(0.0, f64::max);
    let tol = f64::EPSILON * max_diag.max(f64::MIN_POSITIVE) * d as f64;

    let mut l = Array2::<f64>::zeros((d, d));
    for j in 0..d {
        let mut diag = a[[j, j]];
        for k in 0..j {
            diag -= l[[j, k]] * l[[j, k]];
        }
        if !(diag > tol) {
            return Err(Error::Solver(format!(
                "matrix is not positive definite (pivot {diag:e} at column {j})"
            )));
        }
        let ljj = diag.sqrt();
        l[[j, j]] = ljj;
        for i in (j + 1)..d {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / ljj;
        }
    }

    // L z = b
    let mut z = Array1::<f64>::zeros(d);
    for i in 0..d {
        let mut s = b[i];
        for k in 0..i {
            s -= l[[i, k]] * z[k];
        }
        z[i] = s / l[[i, i]];
    }
    // Lᵀ x = z
    let mut x = Array1::<f64>::zeros(d);
    for i in (0..d).rev() {
        let mut s = z[i];
        for k in (i + 1)..d {
            s -= l[[k, i]] * x[k];
        }
        x[i] = s / l[[i, i]];
    }
    Ok(x)
}
