//! Replica-symmetric theory: saddle points, free entropy and entropy curves.
//!
//! Conventions: the bias weight is `exp(-N mu Lambda)` with `Lambda = lambda / 2`,
//! so `lambda(mu) = -2 dphi/dmu` and `Sigma = phi + mu lambda / 2`. `mu > 0`
//! traces the minimum-eigenvalue branch, `mu < 0` the maximum-eigenvalue branch.

mod curve;
mod saddle;

pub use curve::{
    entropy_at_lambda, grid_branch, legendre_phi, mu_grid, read_curve_csv, write_curve_csv, RsPoint, CURVE_COLUMNS,
};
pub use saddle::{xi_limit, KernelMoments, RsParams, RsSolver, SaddlePoint, Solution, SolverOptions, XiKernel};
