//! Static minimax estimation over a KL ball of degenerate Gaussians.
//!
//! The adversary inflates the posterior covariance of `x` on its own image,
//! `P~ = (P+ - theta H'H)+`, with the multiplier `theta` chosen so that the
//! perturbed joint density sits exactly on the boundary of the KL ball.
//! Every quantity here is computed on the eigenvalues of `P`:
//!
//! ```text
//! gamma(P, theta) = 1/2 sum_i [ ln(1 - theta s_i) + 1/(1 - theta s_i) - 1 ]
//! P~ eigenvalues  = s_i / (1 - theta s_i)
//! ```

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, RkfError};
use crate::gaussian::{conditional_parts, DegenerateGaussian, JointGaussian};
use crate::pseudolinalg::SymPsdMatrix;

/// Default bisection accuracy on `gamma`, in nats.
pub const DEFAULT_EPS: f64 = 1e-9;

/// Relative margin keeping the bisection bracket strictly inside `(0, 1/sigma_max)`.
const BRACKET_MARGIN: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct RobustUpdate {
    pub gain: DMatrix<f64>,
    pub nominal_post: SymPsdMatrix,
    pub worst_post: SymPsdMatrix,
    pub theta: f64,
    pub tolerance: f64,
}

impl RobustUpdate {
    /// Quadratic loss `1/2 tr(P~)` of the robust estimator under the least favorable density.
    pub fn worst_case_loss(&self) -> f64 {
        0.5 * self.worst_post.trace()
    }

    /// The least favorable joint density: only the `x` block of the joint
    /// covariance moves, by `P~ - P`.
    pub fn least_favorable_joint(&self, j: &JointGaussian) -> Result<DegenerateGaussian> {
        let mut k = j.base.cov.entries().clone();
        let delta = self.worst_post.entries() - self.nominal_post.entries();
        let mut block = k.view_mut((0, 0), (j.n_x, j.n_x));
        block += &delta;
        let cov = SymPsdMatrix::with_tol(k, j.base.cov.rank_tol())?;
        DegenerateGaussian::new(j.base.mean.clone(), cov)
    }
}

fn check_theta(p: &SymPsdMatrix, theta: f64) -> Result<()> {
    let sigma_max = p.sigma_max();
    if !theta.is_finite() || theta < 0.0 || theta * sigma_max >= 1.0 - BRACKET_MARGIN {
        return Err(RkfError::MultiplierOutOfRange { theta, sigma_max });
    }
    Ok(())
}

/// `ln(1 - x) + 1/(1 - x) - 1`, written to keep precision for small `x`.
fn gamma_term(x: f64) -> f64 {
    (-x).ln_1p() + x / (1.0 - x)
}

/// KL cost of the inflation `P -> P~(theta)`.
pub fn gamma(p: &SymPsdMatrix, theta: f64) -> Result<f64> {
    check_theta(p, theta)?;
    Ok(0.5 * p.retained_eigenvalues().iter().map(|s| gamma_term(theta * s)).sum::<f64>())
}

/// Unique `theta` in `(0, 1/sigma_max(P))` with `|gamma(P, theta) - c| <= eps`, by bisection.
pub fn solve_theta(p: &SymPsdMatrix, c: f64, eps: f64) -> Result<f64> {
    if p.rank() == 0 {
        return Err(RkfError::NoUncertaintyChannel);
    }
    if !(c.is_finite() && c > 0.0) {
        return Err(RkfError::InvalidTolerance(format!("c = {c} must be positive")));
    }
    if !(eps.is_finite() && eps > 0.0) {
        return Err(RkfError::InvalidTolerance(format!("eps = {eps} must be positive")));
    }
    let sigmas = p.retained_eigenvalues();
    let eval = |theta: f64| 0.5 * sigmas.iter().map(|s| gamma_term(theta * s)).sum::<f64>();

    let mut lo = 0.0;
    let mut hi = (1.0 - BRACKET_MARGIN) / p.sigma_max();
    if eval(hi) < c - eps {
        return Err(RkfError::InvalidTolerance(format!(
            "c = {c} exceeds the largest attainable divergence {:.6e}",
            eval(hi)
        )));
    }
    let mut mid = 0.5 * (lo + hi);
    loop {
        let g = eval(mid);
        if (g - c).abs() <= eps {
            return Ok(mid);
        }
        if g < c {
            lo = mid;
        } else {
            hi = mid;
        }
        let next = 0.5 * (lo + hi);
        if next == lo || next == hi {
            // bracket exhausted at f64 resolution
            return Ok(next);
        }
        mid = next;
    }
}

/// `P~ = (P+ - theta H'H)+`: eigenvalues `s / (1 - theta s)` on `Im(P)`, zero elsewhere.
///
/// The map is applied to the whole spectrum. It fixes zero, so eigenvalues
/// below the rank tolerance stay negligible instead of being truncated, and
/// the result does not jump when one of them crosses the tolerance.
pub fn worst_posterior(p: &SymPsdMatrix, theta: f64) -> Result<SymPsdMatrix> {
    check_theta(p, theta)?;
    if theta == 0.0 {
        return Ok(p.clone());
    }
    let inflated: Vec<f64> = p.eigenvalues().iter().map(|s| s / (1.0 - theta * s)).collect();
    SymPsdMatrix::from_spectrum(p.eigenvectors(), &inflated, p.rank_tol())
}

/// Static minimax estimator for the joint density `j` and KL tolerance `c`.
pub fn robust_static_estimate(j: &JointGaussian, c: f64, eps: f64) -> Result<RobustUpdate> {
    let (gain, nominal_post) = conditional_parts(j)?;
    let theta = solve_theta(&nominal_post, c, eps)?;
    let worst_post = worst_posterior(&nominal_post, theta)?;
    Ok(RobustUpdate { gain, nominal_post, worst_post, theta, tolerance: c })
}

/// `1/2 E||x - m_x - G (y - m_y)||^2` under `actual`, for the affine estimator
/// built from the nominal means and gain `gain`.
pub fn estimator_loss(
    gain: &DMatrix<f64>,
    nominal_mean: &DVector<f64>,
    actual: &DegenerateGaussian,
    n_x: usize,
) -> Result<f64> {
    let n = actual.dim();
    if nominal_mean.len() != n || gain.nrows() != n_x || gain.ncols() + n_x != n {
        return Err(RkfError::Dimension(format!(
            "gain {}x{} for joint dimension {n} with n_x = {n_x}",
            gain.nrows(),
            gain.ncols()
        )));
    }
    // e = [I, -G] (z - m)
    let mut selector = DMatrix::zeros(n_x, n);
    selector.view_mut((0, 0), (n_x, n_x)).fill_with_identity();
    selector.view_mut((0, n_x), (n_x, n - n_x)).copy_from(&(-gain));
    let bias = &selector * (&actual.mean - nominal_mean);
    let cov = &selector * actual.cov.entries() * selector.transpose();
    Ok(0.5 * (bias.norm_squared() + cov.trace()))
}
