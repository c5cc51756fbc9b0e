//! Low-rank robust Kalman filter. The standard Kalman filter and the
//! fixed-theta risk-sensitive relaxation run through the same step.
//!
//! One step of the robust recursion at time `t`, starting from `(x^_t, P~_t)`:
//!
//! 1. `G_t = (A P~ C' + B D') (C P~ C' + D D')^-1`
//! 2. `x^_{t+1} = A x^_t + G_t (y_t - C x^_t)`
//! 3. `P_{t+1} = A P~ A' - G_t (C P~ C' + D D') G_t' + B B'`
//! 4. `H_t' H_t` = projection onto `Im(P_{t+1})`
//! 5. `theta_t` solves `gamma(P_{t+1}, theta_t) = c_t`
//! 6. `P~_{t+1} = (P_{t+1}+ - theta_t H_t' H_t)+`
//!
//! With `c_t = 0` steps 4-6 collapse to `P~ = P` and this is the Kalman
//! filter; the risk-sensitive variant replaces steps 5-6 by a fixed `theta`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, RkfError};
use crate::model::{StateSpaceModel, SystemMatrices};
use crate::pseudolinalg::{spd_inverse, SymPsdMatrix};
use crate::static_robust::{solve_theta, worst_posterior, DEFAULT_EPS};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FilterVariant {
    Kalman,
    /// Time-varying multiplier fixed by the KL tolerance `c`.
    Robust { c: f64 },
    /// Fixed risk sensitivity `theta`.
    RiskSensitive { theta: f64 },
}

impl FilterVariant {
    pub fn label(&self) -> String {
        match self {
            FilterVariant::Kalman => "kf".to_string(),
            FilterVariant::Robust { c } => format!("rkf(c={c})"),
            FilterVariant::RiskSensitive { theta } => format!("rs(theta={theta})"),
        }
    }
}

/// Filter output after a step. For the state at index `t + 1`, `gain`,
/// `theta` and `projection` are the `G_t`, `theta_t` and `H_t' H_t`
/// that produced it; the initial state carries a zero gain and `theta = 0`.
#[derive(Debug, Clone)]
pub struct FilterState {
    pub t: usize,
    pub x_hat: DVector<f64>,
    pub p: SymPsdMatrix,
    pub p_tilde: SymPsdMatrix,
    pub theta: f64,
    pub gain: DMatrix<f64>,
    pub projection: DMatrix<f64>,
}

impl FilterState {
    pub fn initial(model: &StateSpaceModel) -> Self {
        let cov = model.init_cov().clone();
        Self {
            t: 0,
            x_hat: model.init_mean().clone(),
            projection: cov.projection(),
            p: cov.clone(),
            p_tilde: cov,
            theta: 0.0,
            gain: DMatrix::zeros(model.state_dim(), model.obs_dim()),
        }
    }
}

/// Output of the covariance part of one step (independent of the data).
#[derive(Debug, Clone)]
pub struct CovarianceStep {
    pub gain: DMatrix<f64>,
    pub p_next: SymPsdMatrix,
    pub theta: f64,
    pub p_tilde_next: SymPsdMatrix,
}

/// Steps 1 and 3: gain and nominal prediction covariance from `P~_t`.
fn predict(sys: &SystemMatrices, p_tilde: &SymPsdMatrix) -> Result<(DMatrix<f64>, SymPsdMatrix)> {
    let pt = p_tilde.entries();
    let innovation = &sys.c * pt * sys.c.transpose() + sys.r();
    let innovation_inv = spd_inverse(&innovation)?;
    let cross = &sys.a * pt * sys.c.transpose() + sys.s();
    let gain = cross * innovation_inv;
    let p_next = &sys.a * pt * sys.a.transpose() - &gain * innovation * gain.transpose() + sys.q();
    let p_next = SymPsdMatrix::with_tol(p_next, p_tilde.rank_tol())?;
    Ok((gain, p_next))
}

fn check_dims(sys: &SystemMatrices, p_tilde: &SymPsdMatrix) -> Result<()> {
    if p_tilde.dim() != sys.state_dim() {
        return Err(RkfError::Dimension(format!(
            "covariance of size {} for state dimension {}",
            p_tilde.dim(),
            sys.state_dim()
        )));
    }
    Ok(())
}

/// Steps 5 and 6: the multiplier and least favorable covariance for a
/// nominal prediction covariance `p` at step `t`.
pub fn tilt(p: &SymPsdMatrix, variant: FilterVariant, t: usize, eps: f64) -> Result<(f64, SymPsdMatrix)> {
    match variant {
        FilterVariant::Kalman => Ok((0.0, p.clone())),
        FilterVariant::Robust { c: 0.0 } => Ok((0.0, p.clone())),
        FilterVariant::Robust { c } => {
            if c < 0.0 || !c.is_finite() {
                return Err(RkfError::InvalidTolerance(format!("c = {c}")));
            }
            if p.rank() == 0 {
                // nothing to perturb
                return Ok((0.0, p.clone()));
            }
            let theta = solve_theta(p, c, eps)?;
            Ok((theta, worst_posterior(p, theta)?))
        }
        FilterVariant::RiskSensitive { theta: 0.0 } => Ok((0.0, p.clone())),
        FilterVariant::RiskSensitive { theta } => {
            let product = theta * p.sigma_max();
            if !(theta > 0.0) || product >= 1.0 - 1e-12 {
                return Err(RkfError::RiskParameterTooLarge { t, theta, product });
            }
            Ok((theta, worst_posterior(p, theta)?))
        }
    }
}

/// Data-free part of one step of `variant` at time `t`.
pub fn covariance_step(
    sys: &SystemMatrices,
    variant: FilterVariant,
    t: usize,
    p_tilde: &SymPsdMatrix,
    eps: f64,
) -> Result<CovarianceStep> {
    check_dims(sys, p_tilde)?;
    let (gain, p_next) = predict(sys, p_tilde)?;
    let (theta, p_tilde_next) = tilt(&p_next, variant, t, eps)?;
    Ok(CovarianceStep { gain, p_next, theta, p_tilde_next })
}

/// One step of `variant`, mapping the state at `t` to the state at `t + 1`.
pub fn filter_step(
    model: &StateSpaceModel,
    variant: FilterVariant,
    t: usize,
    x_hat: &DVector<f64>,
    p_tilde: &SymPsdMatrix,
    y: &DVector<f64>,
    eps: f64,
) -> Result<FilterState> {
    let sys = model.at(t)?;
    if y.len() != sys.obs_dim() || x_hat.len() != sys.state_dim() {
        return Err(RkfError::Dimension(format!(
            "observation of length {} / estimate of length {} for (n, p) = ({}, {})",
            y.len(),
            x_hat.len(),
            sys.state_dim(),
            sys.obs_dim()
        )));
    }
    let step = covariance_step(sys, variant, t, p_tilde, eps)?;
    let innovation = y - &sys.c * x_hat;
    let x_next = &sys.a * x_hat + &step.gain * innovation;
    let projection = step.p_next.projection();
    Ok(FilterState {
        t: t + 1,
        x_hat: x_next,
        p: step.p_next,
        p_tilde: step.p_tilde_next,
        theta: step.theta,
        gain: step.gain,
        projection,
    })
}

/// Standard Kalman step from the one-step-ahead covariance `p_pred`.
pub fn kf_step(
    model: &StateSpaceModel,
    t: usize,
    x_hat: &DVector<f64>,
    p_pred: &SymPsdMatrix,
    y: &DVector<f64>,
) -> Result<FilterState> {
    filter_step(model, FilterVariant::Kalman, t, x_hat, p_pred, y, DEFAULT_EPS)
}

/// Robust step with KL tolerance `c` (bisection accuracy `eps`).
pub fn rkf_step(
    model: &StateSpaceModel,
    t: usize,
    x_hat: &DVector<f64>,
    p_tilde_prev: &SymPsdMatrix,
    y: &DVector<f64>,
    c: f64,
    eps: f64,
) -> Result<FilterState> {
    filter_step(model, FilterVariant::Robust { c }, t, x_hat, p_tilde_prev, y, eps)
}

/// Risk-sensitive step with fixed `theta`.
pub fn rs_step(
    model: &StateSpaceModel,
    t: usize,
    x_hat: &DVector<f64>,
    p_tilde_prev: &SymPsdMatrix,
    y: &DVector<f64>,
    theta: f64,
) -> Result<FilterState> {
    filter_step(model, FilterVariant::RiskSensitive { theta }, t, x_hat, p_tilde_prev, y, DEFAULT_EPS)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepSummary {
    pub t: usize,
    pub trace_p: f64,
    pub trace_p_tilde: f64,
    pub min_eig_p: Option<f64>,
    pub min_eig_p_tilde: Option<f64>,
    pub rank_p: usize,
    pub rank_p_tilde: usize,
    pub theta: f64,
}

impl StepSummary {
    fn of(state: &FilterState) -> Self {
        Self {
            t: state.t,
            trace_p: state.p.trace(),
            trace_p_tilde: state.p_tilde.trace(),
            min_eig_p: state.p.min_nonnull_eigenvalue(),
            min_eig_p_tilde: state.p_tilde.min_nonnull_eigenvalue(),
            rank_p: state.p.rank(),
            rank_p_tilde: state.p_tilde.rank(),
            theta: state.theta,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FilterTrace {
    pub variant: FilterVariant,
    pub states: Vec<FilterState>,
    pub summaries: Vec<StepSummary>,
}

impl FilterTrace {
    /// Number of steps taken.
    pub fn horizon(&self) -> usize {
        self.states.len() - 1
    }

    /// `G_0 .. G_{T-1}`.
    pub fn gains(&self) -> Vec<DMatrix<f64>> {
        self.states[1..].iter().map(|s| s.gain.clone()).collect()
    }

    pub fn thetas(&self) -> Vec<f64> {
        self.summaries.iter().map(|s| s.theta).collect()
    }

    pub fn last(&self) -> &FilterState {
        self.states.last().expect("trace holds at least the initial state")
    }
}

/// Runs `horizon` steps of `variant` from the model's initial density.
/// Without observations every innovation is zero, which leaves the
/// covariances and gains unchanged.
pub fn run_filter(
    model: &StateSpaceModel,
    variant: FilterVariant,
    observations: Option<&[DVector<f64>]>,
    horizon: usize,
    eps: f64,
) -> Result<FilterTrace> {
    if let Some(obs) = observations {
        if obs.len() < horizon {
            return Err(RkfError::InvalidArgument(format!(
                "{} observations for horizon {horizon}",
                obs.len()
            )));
        }
    }
    let zero = DVector::zeros(model.obs_dim());
    let mut states = Vec::with_capacity(horizon + 1);
    states.push(FilterState::initial(model));
    for t in 0..horizon {
        let prev = &states[t];
        let y = match observations {
            Some(obs) => &obs[t],
            None => &zero,
        };
        let next = filter_step(model, variant, t, &prev.x_hat, &prev.p_tilde, y, eps)
            .map_err(|e| e.at_step(t))?;
        states.push(next);
    }
    let summaries = states.iter().map(StepSummary::of).collect();
    Ok(FilterTrace { variant, states, summaries })
}
