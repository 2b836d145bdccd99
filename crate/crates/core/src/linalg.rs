//! Dense helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Solves `S X = B` for symmetric positive (semi)definite `S`.
///
/// The system is Jacobi-equilibrated and Cholesky-factored. If the
/// factorization fails, `1e-12 · tr / dim` is added to the diagonal once.
/// One step of iterative refinement follows.
pub fn solve_spd(s: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = s.nrows();
    if s.ncols() != n || b.nrows() != n {
        return Err(Error::Dimension {
            context: "solve_spd",
            expected: n,
            found: b.nrows(),
        });
    }
    if n == 0 {
        return Ok(DMatrix::zeros(0, b.ncols()));
    }
    let diag: Vec<f64> = (0..n).map(|i| s[(i, i)]).collect();
    if diag.iter().any(|d| !(*d > 0.0) || !d.is_finite()) {
        return Err(Error::Singular {
            condition: f64::INFINITY,
        });
    }
    let scale = DVector::from_iterator(n, diag.iter().map(|d| 1.0 / d.sqrt()));
    let scaled = DMatrix::from_fn(n, n, |i, j| s[(i, j)] * scale[i] * scale[j]);

    let chol = match scaled.clone().cholesky() {
        Some(c) => c,
        None => {
            let jitter = 1e-12 * scaled.trace() / n as f64;
            let mut jittered = scaled.clone();
            for i in 0..n {
                jittered[(i, i)] += jitter;
            }
            jittered.cholesky().ok_or_else(|| Error::Singular {
                condition: condition_number(s),
            })?
        }
    };

    let scaled_rhs = DMatrix::from_fn(n, b.ncols(), |i, j| b[(i, j)] * scale[i]);
    let mut y = chol.solve(&scaled_rhs);
    let residual = &scaled_rhs - &scaled * &y;
    y += chol.solve(&residual);
    let x = DMatrix::from_fn(n, b.ncols(), |i, j| y[(i, j)] * scale[i]);
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular {
            condition: condition_number(s),
        });
    }
    Ok(x)
}

pub fn solve_spd_vec(s: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let rhs = DMatrix::from_column_slice(b.len(), 1, b.as_slice());
    let x = solve_spd(s, &rhs)?;
    Ok(x.column(0).into_owned())
}

/// 2-norm condition number from the singular values.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.singular_values();
    let max = sv.iter().copied().fold(0.0, f64::max);
    let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(s: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(s.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Moore–Penrose pseudo-inverse of a full-row-rank matrix: `Aᵀ (A Aᵀ)⁻¹`.
pub fn right_pseudo_inverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let gram = a * a.transpose();
    let x = solve_spd(&gram, a)?;
    Ok(x.transpose())
}

pub fn frobenius_dot(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}
