//! Dense numerical kernels shared by the rest of the crate.

mod bootstrap;
mod eigen;
mod linalg;
mod logistic;
mod matrix;
pub mod rng;
mod roots;
mod slope;
mod softmax;
mod welch;

pub use bootstrap::{bootstrap_ci, mean, median, quantile};
pub use eigen::{sym_eig, SymEigen};
pub use linalg::{lstsq, ridge_fit, Cholesky, RidgeFit};
pub use logistic::{fit_logistic, LogisticFit};
pub use matrix::{add_vec, axpy, dot, norm, scale_vec, sub_vec, Matrix};
pub use roots::bisect_root;
pub use slope::loglog_slope;
pub use softmax::{softmax_in_place, softmax_rows};
pub use welch::{welch_t_test, WelchTest};
