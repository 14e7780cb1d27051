//! Dense small-matrix arithmetic, spectral quantities, random streams and
//! finite-difference utilities.

mod finite_diff;
mod linsolve;
mod matrix;
mod rng;
mod spectral;

pub use finite_diff::{finite_diff_grad, max_relative_error};
pub use linsolve::solve_spd;
pub use matrix::Matrix;
pub use rng::RngStream;
pub use spectral::{
    algebraic_connectivity, singular_values, spectral_norm, symmetric_eigen, symmetric_eigenvalues, validate_laplacian,
    SymmetricEigen, JACOBI_MAX_DIM,
};
