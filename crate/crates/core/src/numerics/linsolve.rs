use crate::error::{invalid_input, Result};
use crate::numerics::Matrix;
use crate::scalar::Scalar;

/// Solves `H X = rhs` for symmetric positive-definite `H` by Cholesky factorisation.
pub fn solve_spd<S: Scalar>(h: &Matrix<S>, rhs: &Matrix<S>) -> Result<Matrix<S>> {
    let n = h.rows();
    if !h.is_square() || rhs.rows() != n {
        return Err(invalid_input(format!(
            "solve_spd: {}x{} system with {}x{} right-hand side",
            h.rows(),
            h.cols(),
            rhs.rows(),
            rhs.cols()
        )));
    }
    let mut l = Matrix::<S>::zeros(n, n);
    for j in 0..n {
        let mut d = h[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > S::zero()) {
            return Err(invalid_input("matrix is not positive definite"));
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in j + 1..n {
            let mut s = h[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    let mut x = rhs.clone();
    for c in 0..rhs.cols() {
        for i in 0..n {
            let mut s = x[(i, c)];
            for k in 0..i {
                s -= l[(i, k)] * x[(k, c)];
            }
            x[(i, c)] = s / l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = x[(i, c)];
            for k in i + 1..n {
                s -= l[(k, i)] * x[(k, c)];
            }
            x[(i, c)] = s / l[(i, i)];
        }
    }
    Ok(x)
}
