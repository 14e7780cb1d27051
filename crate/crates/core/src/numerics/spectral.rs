//! Eigenvalues and singular values of small dense matrices.
//!
//! Symmetric eigenproblems use cyclic Jacobi rotations; singular values use
//! one-sided (Hestenes) Jacobi, which keeps small singular values accurate to
//! roughly `eps * sigma_max` instead of `sqrt(eps) * sigma_max`.

use crate::error::{invalid_input, Result};
use crate::numerics::Matrix;
use crate::scalar::Scalar;

/// Matrices whose smaller side exceeds this use power iteration for the spectral norm.
pub const JACOBI_MAX_DIM: usize = 64;

const MAX_SWEEPS: usize = 100;

/// Eigen-decomposition of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymmetricEigen<S: Scalar> {
    /// Ascending.
    pub values: Vec<S>,
    /// Column `k` is the unit eigenvector for `values[k]`.
    pub vectors: Matrix<S>,
}

fn ensure_finite<S: Scalar>(m: &Matrix<S>) -> Result<()> {
    if m.is_finite() {
        Ok(())
    } else {
        Err(invalid_input("matrix has non-finite entries"))
    }
}

/// Cyclic Jacobi eigen-decomposition of a symmetric matrix.
pub fn symmetric_eigen<S: Scalar>(m: &Matrix<S>) -> Result<SymmetricEigen<S>> {
    ensure_finite(m)?;
    if !m.is_square() {
        return Err(invalid_input(format!(
            "eigen-decomposition needs a square matrix, got {}x{}",
            m.rows(),
            m.cols()
        )));
    }
    let scale = m.max_abs().max(S::one());
    if !m.is_symmetric(S::of(1e3) * S::EPS * scale) {
        return Err(invalid_input("eigen-decomposition needs a symmetric matrix"));
    }
    let n = m.rows();
    let mut a = m.clone();
    let mut v = Matrix::identity(n);
    let total = a.frobenius();
    let tol = S::EPS * total;

    for _ in 0..MAX_SWEEPS {
        let off: S = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum::<S>()
            .sqrt();
        if off <= tol || off == S::zero() {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq.abs() <= S::min_positive_value() {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (S::two() * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + S::one()).sqrt());
                let c = S::one() / (t * t + S::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
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

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].partial_cmp(&a[(j, j)]).expect("finite eigenvalues"));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let vectors = Matrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    Ok(SymmetricEigen { values, vectors })
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn symmetric_eigenvalues<S: Scalar>(m: &Matrix<S>) -> Result<Vec<S>> {
    Ok(symmetric_eigen(m)?.values)
}

/// All singular values, descending, by one-sided Jacobi.
pub fn singular_values<S: Scalar>(m: &Matrix<S>) -> Result<Vec<S>> {
    ensure_finite(m)?;
    // Work on the wider orientation's transpose so each row below is a column of the tall matrix.
    let mut cols = if m.rows() >= m.cols() { m.transpose() } else { m.clone() };
    let k = cols.rows();
    let len = cols.cols();
    let tol = S::EPS;

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for i in 0..k {
            for j in i + 1..k {
                let (mut alpha, mut beta, mut gamma) = (S::zero(), S::zero(), S::zero());
                for t in 0..len {
                    let x = cols[(i, t)];
                    let y = cols[(j, t)];
                    alpha += x * x;
                    beta += y * y;
                    gamma += x * y;
                }
                if gamma == S::zero() || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (S::two() * gamma);
                let t = zeta.signum() / (zeta.abs() + (S::one() + zeta * zeta).sqrt());
                let c = S::one() / (S::one() + t * t).sqrt();
                let s = c * t;
                for idx in 0..len {
                    let x = cols[(i, idx)];
                    let y = cols[(j, idx)];
                    cols[(i, idx)] = c * x - s * y;
                    cols[(j, idx)] = s * x + c * y;
                }
            }
        }
        if !rotated {
            break;
        }
    }

    let mut sv: Vec<S> = (0..k)
        .map(|i| cols.row(i).iter().map(|&x| x * x).sum::<S>().sqrt())
        .collect();
    sv.sort_by(|a, b| b.partial_cmp(a).expect("finite singular values"));
    Ok(sv)
}

/// Largest singular value (operator 2-norm).
pub fn spectral_norm<S: Scalar>(m: &Matrix<S>) -> Result<S> {
    ensure_finite(m)?;
    if m.rows().min(m.cols()) <= JACOBI_MAX_DIM {
        Ok(singular_values(m)?.first().copied().unwrap_or_else(S::zero))
    } else {
        Ok(power_iteration_norm(m))
    }
}

/// Power iteration on `MᵀM` from a fixed, non-symmetric start vector.
fn power_iteration_norm<S: Scalar>(m: &Matrix<S>) -> S {
    let n = m.cols();
    let mut v = Matrix::from_fn(n, 1, |i, _| S::one() + S::of(i as f64 / n as f64));
    let norm = v.frobenius();
    v = v.scale(S::one() / norm);
    let mut estimate = S::zero();
    for _ in 0..100_000 {
        let mv = m * &v;
        let w = m.tr_matmul(&mv).expect("shapes agree");
        let w_norm = w.frobenius();
        if w_norm == S::zero() {
            return S::zero();
        }
        let next = w_norm.sqrt();
        v = w.scale(S::one() / w_norm);
        if (next - estimate).abs() <= S::of(1e-14) * next {
            return next;
        }
        estimate = next;
    }
    estimate
}

/// Checks that `l` is a combinatorial graph Laplacian.
pub fn validate_laplacian<S: Scalar>(l: &Matrix<S>) -> Result<()> {
    ensure_finite(l)?;
    if !l.is_square() || l.rows() < 2 {
        return Err(invalid_input("a Laplacian must be square with at least 2 nodes"));
    }
    let n = l.rows();
    for i in 0..n {
        let mut off_sum = S::zero();
        for j in 0..n {
            if i == j {
                continue;
            }
            let x = l[(i, j)];
            if x != S::zero() && x != -S::one() {
                return Err(invalid_input(format!(
                    "Laplacian off-diagonal ({i},{j}) = {x} is not 0 or -1"
                )));
            }
            if x != l[(j, i)] {
                return Err(invalid_input("Laplacian is not symmetric"));
            }
            off_sum += x;
        }
        if l[(i, i)] + off_sum != S::zero() {
            return Err(invalid_input(format!("Laplacian row {i} does not sum to 0")));
        }
    }
    Ok(())
}

/// Second-smallest Laplacian eigenvalue, clamped at zero.
pub fn algebraic_connectivity<S: Scalar>(l: &Matrix<S>) -> Result<S> {
    validate_laplacian(l)?;
    let values = symmetric_eigenvalues(l)?;
    let lambda2 = values[1];
    // Round-off can leave a disconnected graph's second zero eigenvalue slightly negative.
    let floor = S::of(1e3) * S::EPS * values[values.len() - 1].max(S::one());
    Ok(if lambda2 <= floor { S::zero() } else { lambda2 })
}
