use crate::numerics::Matrix;
use crate::scalar::Scalar;

/// Entry-wise central-difference gradient of `f` at `x`.
///
/// `eps` is expected in `[1e-8, 1e-3]`; the truncation error for smooth `f`
/// is `O(eps²)`.
pub fn finite_diff_grad<S, F>(f: F, x: &Matrix<S>, eps: S) -> Matrix<S>
where
    S: Scalar,
    F: Fn(&Matrix<S>) -> S,
{
    assert!(eps > S::zero(), "finite-difference step must be positive");
    let mut probe = x.clone();
    let mut grad = Matrix::zeros(x.rows(), x.cols());
    for i in 0..x.rows() {
        for j in 0..x.cols() {
            let orig = probe[(i, j)];
            probe[(i, j)] = orig + eps;
            let up = f(&probe);
            probe[(i, j)] = orig - eps;
            let down = f(&probe);
            probe[(i, j)] = orig;
            grad[(i, j)] = (up - down) / (S::two() * eps);
        }
    }
    grad
}

/// `max |a - b| / max(|b|, floor)` over entries.
pub fn max_relative_error<S: Scalar>(a: &Matrix<S>, b: &Matrix<S>, floor: S) -> S {
    assert_eq!(a.shape(), b.shape());
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(&x, &y)| (x - y).abs() / y.abs().max(floor))
        .fold(S::zero(), S::max)
}
