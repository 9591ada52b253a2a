//! Small dense solves for the normal equations.

use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Solves `G x = b` for symmetric positive definite `G` (row-major `n x n`)
/// by Cholesky factorization. Fails when a pivot is not positive relative
/// to the matrix scale.
pub fn cholesky_solve(gram: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = rhs.len();
    if gram.len() != n * n {
        return Err(Error::DimensionMismatch {
            what: "gram matrix",
            expected: n * n,
            found: gram.len(),
        });
    }
    let scale = (0..n).map(|i| gram[i * n + i].abs()).fold(0.0, f64::max);
    let tiny = scale * 1e-13;
    let mut l = alloc::vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = gram[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if !(s > tiny) {
                    return Err(Error::SingularSystem);
                }
                l[i * n + i] = libm::sqrt(s);
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    let mut y = alloc::vec![0.0; n];
    for i in 0..n {
        let mut s = rhs[i];
        for k in 0..i {
            s -= l[i * n + k] * y[k];
        }
        y[i] = s / l[i * n + i];
    }
    let mut x = alloc::vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l[k * n + i] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
    Ok(x)
}
