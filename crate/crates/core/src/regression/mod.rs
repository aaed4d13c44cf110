//! Least-squares kernels used by every adjustment.

mod lasso;
mod ols;

pub use lasso::{compute_lambda, iterate_penalty_loadings, lasso_objective, weighted_lasso_fit, LassoConfig, LassoFit};
pub use ols::{ols_fit, OlsFit, RANK_TOL};
