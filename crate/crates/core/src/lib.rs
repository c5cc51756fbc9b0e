//! Robust state estimation for linear Gauss-Markov models whose noise
//! covariances may be singular.
//!
//! The filter hedges against any model whose one-step transition density stays
//! within a Kullback-Leibler ball of the nominal one, with divergence measured
//! on the (possibly degenerate) support of the nominal density.

pub mod convergence;
pub mod error;
pub mod gaussian;
pub mod least_favorable;
pub mod model;
pub mod pseudolinalg;
pub mod robust_filter;
pub mod scenarios;
pub mod static_robust;

pub use error::{Result, RkfError};
pub use gaussian::{kl_divergence, DegenerateGaussian, JointGaussian};
pub use model::{Dynamics, StateSpaceModel, SystemMatrices};
pub use pseudolinalg::{thompson_distance, SymPsdMatrix};
pub use robust_filter::{run_filter, FilterState, FilterTrace, FilterVariant};
pub use static_robust::{gamma, robust_static_estimate, solve_theta, RobustUpdate};
