//! Dense helpers for small symmetric matrices.
//!
//! The model only ever factors per-mode covariance matrices (tens of rows)
//! and covariate blocks (a handful of rows), so a cyclic Jacobi
//! eigendecomposition and an unblocked Cholesky are plenty and keep the
//! crate free of external BLAS/LAPACK linkage.

use ndarray::{Array1, Array2};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LinalgError {
    #[error("matrix is {rows}x{cols}, expected square")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not symmetric: |a[{i},{j}] - a[{j},{i}]| = {diff}")]
    NotSymmetric { i: usize, j: usize, diff: f64 },
    #[error("matrix is not positive definite (pivot {pivot} at {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },
    #[error("matrix is not positive semidefinite (eigenvalue {value})")]
    NegativeEigenvalue { value: f64 },
    #[error("Jacobi eigendecomposition did not converge in {sweeps} sweeps")]
    NoConvergence { sweeps: usize },
}

fn check_square(a: &Array2<f64>) -> Result<usize, LinalgError> {
    let (rows, cols) = a.dim();
    if rows != cols {
        return Err(LinalgError::NotSquare { rows, cols });
    }
    Ok(rows)
}

fn check_symmetric(a: &Array2<f64>) -> Result<(), LinalgError> {
    let n = check_square(a)?;
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    for i in 0..n {
        for j in (i + 1)..n {
            let diff = (a[(i, j)] - a[(j, i)]).abs();
            if diff > 1e-8 * scale {
                return Err(LinalgError::NotSymmetric { i, j, diff });
            }
        }
    }
    Ok(())
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues in descending order and the matching eigenvectors as
/// columns, so `a = v * diag(values) * v^T`.
pub fn sym_eigen(a: &Array2<f64>) -> Result<(Array1<f64>, Array2<f64>), LinalgError> {
    check_symmetric(a)?;
    let n = a.nrows();
    let mut m = a.clone();
    // Work on the symmetrized copy so tiny asymmetries cannot bias rotations.
    for i in 0..n {
        for j in 0..i {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
    let mut v = Array2::eye(n);
    let scale = m.iter().fold(0.0f64, |acc, x| acc.max(x.abs())).max(1.0);
    let tol = 1e-14 * scale;
    let max_sweeps = 64;
    for _ in 0..max_sweeps {
        let mut off = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                off = off.max(m[(i, j)].abs());
            }
        }
        if off <= tol {
            let mut pairs: Vec<(f64, usize)> =
                (0..n).map(|i| (m[(i, i)], i)).collect();
            pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
            let values = Array1::from_iter(pairs.iter().map(|&(val, _)| val));
            let mut vectors = Array2::zeros((n, n));
            for (out_col, &(_, src_col)) in pairs.iter().enumerate() {
                for r in 0..n {
                    vectors[(r, out_col)] = v[(r, src_col)];
                }
            }
            return Ok((values, vectors));
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq.abs() <= tol * 1e-2 {
                    continue;
                }
                let app = m[(p, p)];
                let aqq = m[(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    Err(LinalgError::NoConvergence { sweeps: max_sweeps })
}

/// Symmetric square root of a positive semidefinite matrix via its
/// eigendecomposition. Eigenvalues within rounding of zero are clamped;
/// genuinely negative ones are an error.
pub fn sym_sqrt(a: &Array2<f64>) -> Result<Array2<f64>, LinalgError> {
    let (values, vectors) = sym_eigen(a)?;
    let n = a.nrows();
    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    let mut roots = Array1::zeros(n);
    for (i, &val) in values.iter().enumerate() {
        if val < -1e-10 * scale {
            return Err(LinalgError::NegativeEigenvalue { value: val });
        }
        roots[i] = val.max(0.0).sqrt();
    }
    let mut out = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut sum = 0.0;
            for k in 0..n {
                sum += vectors[(i, k)] * roots[k] * vectors[(j, k)];
            }
            out[(i, j)] = sum;
            out[(j, i)] = sum;
        }
    }
    Ok(out)
}

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky(a: &Array2<f64>) -> Result<Array2<f64>, LinalgError> {
    check_symmetric(a)?;
    let n = a.nrows();
    let scale = (0..n).fold(0.0f64, |m, i| m.max(a[(i, i)].abs())).max(1.0);
    let mut l: Array2<f64> = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[(i, j)];
            for k in 0..j {
                sum -= l[(i, k)] * l[(j, k)];
            }
            if i == j {
                if sum <= 1e-14 * scale {
                    return Err(LinalgError::NotPositiveDefinite {
                        index: i,
                        pivot: sum,
                    });
                }
                l[(i, j)] = sum.sqrt();
            } else {
                l[(i, j)] = sum / l[(j, j)];
            }
        }
    }
    Ok(l)
}

/// Solves `a * x = b` for symmetric positive definite `a` via Cholesky,
/// one right-hand side per column of `b`.
pub fn solve_spd(a: &Array2<f64>, b: &Array2<f64>) -> Result<Array2<f64>, LinalgError> {
    let l = cholesky(a)?;
    let n = a.nrows();
    let mut x = b.clone();
    for col in 0..b.ncols() {
        // Forward substitution L y = b.
        for i in 0..n {
            let mut sum = x[(i, col)];
            for k in 0..i {
                sum -= l[(i, k)] * x[(k, col)];
            }
            x[(i, col)] = sum / l[(i, i)];
        }
        // Back substitution L^T x = y.
        for i in (0..n).rev() {
            let mut sum = x[(i, col)];
            for k in (i + 1)..n {
                sum -= l[(k, i)] * x[(k, col)];
            }
            x[(i, col)] = sum / l[(i, i)];
        }
    }
    Ok(x)
}

/// Inverse of a symmetric positive definite matrix.
pub fn inv_spd(a: &Array2<f64>) -> Result<Array2<f64>, LinalgError> {
    solve_spd(a, &Array2::eye(a.nrows()))
}
