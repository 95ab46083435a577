//! Shared numerical kernels: dense solves, quadrature rules, special
//! functions, and counter-based random streams.

pub mod mat;
pub mod quadrature;
pub mod rng;
pub mod special;

pub use mat::{first_dependent_column, sandwich, solve_spd, Cholesky, Mat};
pub use quadrature::{adaptive_simpson, gauss_hermite, gauss_legendre, normal_expectation};
pub use rng::RngStream;
pub use special::{
    erf, erf_inv, erfc, ln_gamma, norm_quantile_level, normal_cdf, normal_quantile,
    reg_lower_gamma, reg_upper_gamma,
};
