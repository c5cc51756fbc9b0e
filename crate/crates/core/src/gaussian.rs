//! Degenerate Gaussian densities and their same-support KL divergence.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, RkfError};
use crate::pseudolinalg::{spd_inverse, subspace_distance, SymPsdMatrix, SUPPORT_TOL};

/// Gaussian with possibly singular covariance; its support is the affine
/// set `mean + Im(cov)`.
#[derive(Debug, Clone)]
pub struct DegenerateGaussian {
    pub mean: DVector<f64>,
    pub cov: SymPsdMatrix,
}

impl DegenerateGaussian {
    pub fn new(mean: DVector<f64>, cov: SymPsdMatrix) -> Result<Self> {
        if mean.len() != cov.dim() {
            return Err(RkfError::Dimension(format!(
                "mean of length {} with {}x{} covariance",
                mean.len(),
                cov.dim(),
                cov.dim()
            )));
        }
        Ok(Self { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `(image gap, mean residual)` against another density; both must be
    /// below tolerance for the two to share a support.
    pub fn support_gap(&self, other: &DegenerateGaussian) -> Result<(f64, f64)> {
        let gap = subspace_distance(&self.cov, &other.cov)?;
        let dm = &self.mean - &other.mean;
        let off_support = &dm - other.cov.projection() * &dm;
        Ok((gap, off_support.norm() / (1.0 + dm.norm())))
    }
}

/// `D(actual || nominal)` for two degenerate Gaussians on the same support:
/// `1/2 [dm' K+ dm + ln det+ K - ln det+ K~ + tr(K+ K~) - rank]`, with `K` the
/// nominal covariance. Evaluated in an orthonormal basis of the common image.
pub fn kl_divergence(actual: &DegenerateGaussian, nominal: &DegenerateGaussian) -> Result<f64> {
    if actual.dim() != nominal.dim() {
        return Err(RkfError::Dimension(format!(
            "densities of dimension {} and {}",
            actual.dim(),
            nominal.dim()
        )));
    }
    let (gap, residual) = actual.support_gap(nominal)?;
    if gap >= SUPPORT_TOL || residual >= SUPPORT_TOL || actual.cov.rank() != nominal.cov.rank() {
        return Err(RkfError::DistinctSupport { image_gap: gap, mean_residual: residual });
    }
    let r = nominal.cov.rank();
    if r == 0 {
        return Ok(0.0);
    }
    let h = nominal.cov.image_basis();
    let k_red = h.transpose() * nominal.cov.entries() * &h;
    let kt_red = h.transpose() * actual.cov.entries() * &h;
    let dm = h.transpose() * (&actual.mean - &nominal.mean);

    let k_chol = k_red
        .clone()
        .cholesky()
        .ok_or_else(|| RkfError::NotPsd("reduced nominal covariance not PD".into()))?;
    let kt_chol = kt_red
        .clone()
        .cholesky()
        .ok_or_else(|| RkfError::NotPsd("reduced actual covariance not PD".into()))?;
    let ln_det = |l: &DMatrix<f64>| 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();

    let quad = dm.dot(&k_chol.solve(&dm));
    let trace = k_chol.solve(&kt_red).trace();
    let value = 0.5 * (quad + ln_det(&k_chol.l()) - ln_det(&kt_chol.l()) + trace - r as f64);
    Ok(value.max(0.0))
}

/// Joint density of `z = (x, y)` with `x` of dimension `n_x`.
#[derive(Debug, Clone)]
pub struct JointGaussian {
    pub base: DegenerateGaussian,
    pub n_x: usize,
    pub n_y: usize,
}

impl JointGaussian {
    pub fn new(base: DegenerateGaussian, n_x: usize) -> Result<Self> {
        let dim = base.dim();
        if n_x >= dim {
            return Err(RkfError::Dimension(format!(
                "state dimension {n_x} leaves no observation block in dimension {dim}"
            )));
        }
        let j = Self { base, n_x, n_y: dim - n_x };
        // K_y must be PD
        spd_inverse(&j.k_y())?;
        Ok(j)
    }

    pub fn k_x(&self) -> DMatrix<f64> {
        self.base.cov.entries().view((0, 0), (self.n_x, self.n_x)).into_owned()
    }

    pub fn k_xy(&self) -> DMatrix<f64> {
        self.base.cov.entries().view((0, self.n_x), (self.n_x, self.n_y)).into_owned()
    }

    pub fn k_y(&self) -> DMatrix<f64> {
        self.base
            .cov
            .entries()
            .view((self.n_x, self.n_x), (self.n_y, self.n_y))
            .into_owned()
    }

    pub fn m_x(&self) -> DVector<f64> {
        self.base.mean.rows(0, self.n_x).into_owned()
    }

    pub fn m_y(&self) -> DVector<f64> {
        self.base.mean.rows(self.n_x, self.n_y).into_owned()
    }
}

/// Gain `K_xy K_y^-1` and posterior covariance `K_x - K_xy K_y^-1 K_yx`.
pub fn conditional_parts(j: &JointGaussian) -> Result<(DMatrix<f64>, SymPsdMatrix)> {
    let k_y_inv = spd_inverse(&j.k_y())?;
    let k_xy = j.k_xy();
    let gain = &k_xy * k_y_inv;
    let post = j.k_x() - &gain * k_xy.transpose();
    let post = clamp_psd(post, j.base.cov.rank_tol())?;
    Ok((gain, post))
}

/// Symmetrize and clamp a matrix that is PSD up to round-off.
pub(crate) fn clamp_psd(m: DMatrix<f64>, rank_tol: f64) -> Result<SymPsdMatrix> {
    SymPsdMatrix::with_tol(m, rank_tol)
}
