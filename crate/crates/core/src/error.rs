use thiserror::Error;

pub type Result<T> = std::result::Result<T, RkfError>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RkfError {
    #[error("matrix is not symmetric positive semidefinite: {0}")]
    NotPsd(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// KL divergence (and the Thompson metric) are only defined between
    /// densities that live on the same affine support.
    #[error("densities have distinct supports (image gap {image_gap:.3e}, mean residual {mean_residual:.3e})")]
    DistinctSupport { image_gap: f64, mean_residual: f64 },

    #[error("observation covariance is not positive definite (min eigenvalue {min_eig:.3e})")]
    IllPosedObservation { min_eig: f64 },

    #[error("risk multiplier theta = {theta} outside (0, 1/sigma_max) with sigma_max = {sigma_max}")]
    MultiplierOutOfRange { theta: f64, sigma_max: f64 },

    #[error("posterior covariance has rank 0: no direction for the adversary to perturb")]
    NoUncertaintyChannel,

    #[error("invalid tolerance: {0}")]
    InvalidTolerance(String),

    #[error("fixed theta = {theta} too large at step {t}: theta * sigma_max(P) = {product} >= 1")]
    RiskParameterTooLarge { t: usize, theta: f64, product: f64 },

    #[error("least favorable noise covariance infeasible at step {t} (min eigenvalue of I - B'WB = {min_eig:.3e})")]
    AdversaryInfeasible { t: usize, min_eig: f64 },

    #[error("degenerate model: {0}")]
    DegenerateModel(String),

    #[error("assumption violated: {0}")]
    AssumptionViolation(String),

    #[error("no convergence after {iterations} iterations (last Thompson distance {last_distance:.3e}, complement energy {complement:.3e})")]
    NonConvergence { iterations: usize, last_distance: f64, complement: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("step {t}: {source}")]
    AtStep { t: usize, source: Box<RkfError> },
}

impl RkfError {
    pub(crate) fn at_step(self, t: usize) -> RkfError {
        match self {
            e @ RkfError::AtStep { .. } => e,
            other => RkfError::AtStep { t, source: Box::new(other) },
        }
    }
}
