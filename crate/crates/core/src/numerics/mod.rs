//! Dense linear algebra and optimization kernels backing the fitting and
//! GPR estimators.

mod lsq;
mod matrix;
mod optimize;

pub use lsq::{
    covariance, finite_difference_jacobian, least_squares, ConvergenceReport, LeastSquaresProblem,
    LsqSettings, LsqSolution, Residuals, StopReason,
};
pub use matrix::{cholesky, dot, log_det, solve_chol, CholeskyFactor, Matrix, SymMatrix};
pub use optimize::{
    finite_difference_gradient, maximize, Bounds, LocalAscent, MaximizeSettings, Maximum,
    Objective,
};
