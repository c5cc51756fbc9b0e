//! Steady-state analysis of the constant-parameter robust iteration.
//!
//! The covariance recursion only ever lives on the reachable subspace
//! `Im(U)` of `(A, B)` once the initial condition has been forgotten; its
//! orthogonal complement `V` carries energy `V' P_t V` that decays to zero.
//! [`fixed_point`] monitors both: the Thompson metric between successive
//! reduced iterates `U' P_t U`, and `sigma_max(V' P_t V)`.
//!
//! [`c_max_bound`] evaluates an explicit tolerance below which the
//! iteration is a contraction, built from `N`-step block Toeplitz matrices
//! of the reachable subsystem `(A_R, Q_R^{1/2}, C_R, D)`:
//!
//! ```text
//! H_k = C_R A_R^{k-1} Q_R^{1/2},  L_k = A_R^{k-1} Q_R^{1/2}   (k >= 1)
//! S   = L (I + H' (DD')^-1 H)^-1 L'
//! J   = O^R - L H' (DD' + HH')^-1 O
//! M(phi) = O' (DD' + HH')^-1 O + J' (S - I/phi)^-1 J
//! ```
//!
//! `phi_N` is the largest `phi <= 1/sigma_max(S)` keeping `M(phi)` positive
//! definite, and `c_max = gamma(P_q, phi_N)` when `phi_N sigma_max(P_q) < 1`
//! (otherwise unbounded), with `P_q` the `q`-th Riccati iterate from zero.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Result, RkfError};
use crate::model::{StateSpaceModel, SystemMatrices};
use crate::pseudolinalg::{
    column_space, spd_inverse, symmetrize, thompson_reduced, SymPsdMatrix, DEFAULT_RANK_TOL,
};
use crate::robust_filter::{covariance_step, FilterVariant};
use crate::static_robust::gamma;

/// Bisection accuracy on `gamma` inside the fixed-point iteration.
pub const FIXED_POINT_EPS: f64 = 1e-14;

/// Relative width at which the search for `phi_N` stops.
const PHI_REL_TOL: f64 = 1e-10;

/// Constant quadruple with `B_n D_n' = 0`, obtained by the substitution
/// `A_n = A - B D' (DD')^-1 C`, `B_n = B (I - D' (DD')^-1 D)`.
#[derive(Debug, Clone)]
pub struct NormalizedModel {
    pub system: SystemMatrices,
    pub transformed: bool,
    pub transform_record: String,
}

pub fn normalize_cross(model: &StateSpaceModel) -> Result<NormalizedModel> {
    let sys = model.as_constant()?;
    let s = sys.s();
    if s.iter().all(|v| *v == 0.0) {
        return Ok(NormalizedModel {
            system: sys.clone(),
            transformed: false,
            transform_record: "B D' = 0, model unchanged".into(),
        });
    }
    let r_inv = spd_inverse(&sys.r())?;
    let a = &sys.a - &s * &r_inv * &sys.c;
    let m = sys.noise_dim();
    let proj = DMatrix::identity(m, m) - sys.d.transpose() * &r_inv * &sys.d;
    let b = &sys.b * proj;
    let system = SystemMatrices::new(a, b, sys.c.clone(), sys.d.clone())?;
    Ok(NormalizedModel {
        system,
        transformed: true,
        transform_record: "A <- A - B D' (DD')^-1 C, B <- B (I - D' (DD')^-1 D)".into(),
    })
}

fn controllability(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let m = b.ncols();
    let mut k = DMatrix::zeros(n, n * m);
    let mut block = b.clone();
    for i in 0..n {
        k.view_mut((0, i * m), (n, m)).copy_from(&block);
        block = a * block;
    }
    k
}

fn observability(a: &DMatrix<f64>, c: &DMatrix<f64>) -> DMatrix<f64> {
    controllability(&a.transpose(), &c.transpose()).transpose()
}

/// Reachable part `(U' A U, U' B, C U)` of a normalized model together
/// with `U` and a basis `V` of its orthogonal complement.
#[derive(Debug, Clone)]
pub struct ReachableSubsystem {
    pub a_r: DMatrix<f64>,
    pub b_r: DMatrix<f64>,
    pub c_r: DMatrix<f64>,
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
}

impl ReachableSubsystem {
    pub fn dim(&self) -> usize {
        self.u.ncols()
    }

    pub fn is_observable(&self, rank_tol: f64) -> bool {
        let (image, _) = column_space(&observability(&self.a_r, &self.c_r).transpose(), rank_tol);
        image.ncols() == self.dim()
    }
}

pub fn reachable_subsystem(model: &NormalizedModel, rank_tol: f64) -> Result<ReachableSubsystem> {
    let sys = &model.system;
    let (u, v) = column_space(&controllability(&sys.a, &sys.b), rank_tol);
    if u.ncols() == 0 {
        return Err(RkfError::DegenerateModel("reachable subspace is trivial (B = 0)".into()));
    }
    Ok(ReachableSubsystem {
        a_r: u.transpose() * &sys.a * &u,
        b_r: u.transpose() * &sys.b,
        c_r: &sys.c * &u,
        u,
        v,
    })
}

#[derive(Debug, Clone)]
pub struct FixedPoint {
    pub p_inf: SymPsdMatrix,
    pub p_tilde_inf: SymPsdMatrix,
    pub theta_inf: f64,
    pub iterations: usize,
    /// Thompson distance of the last two reduced iterates.
    pub last_distance: f64,
    /// `sigma_max(V' P V)` at the last iterate.
    pub complement: f64,
}

/// Iterates the robust prediction covariance `P_{t+1} = r_c(P_t)`, started
/// like the filter from `P~_0` = the model's initial covariance, until successive reduced iterates are within
/// Thompson distance `tol` and the complement energy is below `tol`.
pub fn fixed_point(model: &StateSpaceModel, c: f64, tol: f64, max_iter: usize) -> Result<FixedPoint> {
    if !(tol > 0.0) {
        return Err(RkfError::InvalidTolerance(format!("tol = {tol}")));
    }
    let sys = model.as_constant()?;
    let reach = reachable_subsystem(&normalize_cross(model)?, DEFAULT_RANK_TOL)?;
    let (u, v) = (&reach.u, &reach.v);
    let variant = FilterVariant::Robust { c };
    let reduced = |p: &SymPsdMatrix| SymPsdMatrix::with_tol(u.transpose() * p.entries() * u, p.rank_tol());
    let complement = |p: &SymPsdMatrix| {
        if v.ncols() == 0 {
            0.0
        } else {
            SymmetricEigen::new(symmetrize(&(v.transpose() * p.entries() * v))).eigenvalues.max().max(0.0)
        }
    };

    let mut p_tilde = model.init_cov().clone();
    let mut prev = reduced(model.init_cov())?;
    let mut last_distance = f64::INFINITY;
    let mut energy = complement(model.init_cov());
    for k in 0..max_iter {
        let step = covariance_step(sys, variant, k, &p_tilde, FIXED_POINT_EPS).map_err(|e| e.at_step(k))?;
        let next = reduced(&step.p_next)?;
        last_distance = if prev.rank() == reach.dim() && next.rank() == reach.dim() {
            thompson_reduced(&prev, next.entries())
        } else {
            f64::INFINITY
        };
        energy = complement(&step.p_next);
        if last_distance < tol && energy < tol {
            return Ok(FixedPoint {
                p_inf: step.p_next,
                p_tilde_inf: step.p_tilde_next,
                theta_inf: step.theta,
                iterations: k + 1,
                last_distance,
                complement: energy,
            });
        }
        prev = next;
        p_tilde = step.p_tilde_next;
    }
    Err(RkfError::NonConvergence { iterations: max_iter, last_distance, complement: energy })
}

#[derive(Debug, Clone)]
pub struct CmaxCertificate {
    pub window: usize,
    pub riccati_steps: usize,
    pub phi_n: f64,
    /// `sigma_max(S)`; zero when `S` vanishes and `phi_N` is unbounded above.
    pub sigma_max_s: f64,
    pub p_bar_q_r: SymPsdMatrix,
    pub c_max: f64,
}

fn min_eig(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(symmetrize(m)).eigenvalues.min()
}

fn block_toeplitz(blocks: &[DMatrix<f64>], rows: usize, cols: usize, window: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(window * rows, window * cols);
    for i in 0..window {
        for j in i + 1..window {
            out.view_mut((i * rows, j * cols), (rows, cols)).copy_from(&blocks[j - i]);
        }
    }
    out
}

/// Explicit contraction bound on the tolerance for window `N` and `q`
/// Riccati steps.
pub fn c_max_bound(model: &StateSpaceModel, window: usize, q: usize) -> Result<CmaxCertificate> {
    let n = model.state_dim();
    if window < n || q == 0 {
        return Err(RkfError::InvalidArgument(format!(
            "window N = {window} must be at least n = {n} and q = {q} at least 1"
        )));
    }
    let norm = normalize_cross(model)?;
    let reach = reachable_subsystem(&norm, DEFAULT_RANK_TOL)?;
    if !reach.is_observable(DEFAULT_RANK_TOL) {
        return Err(RkfError::AssumptionViolation("reachable subsystem is not observable".into()));
    }
    let l = reach.dim();
    let sys = &norm.system;
    let p = sys.obs_dim();
    let r = sys.r();
    let q_r = SymPsdMatrix::new(&reach.b_r * reach.b_r.transpose())?;
    let q_half = q_r.sqrt();
    let (a_r, c_r) = (&reach.a_r, &reach.c_r);

    let mut l_blocks = vec![DMatrix::zeros(l, l)];
    let mut power = DMatrix::identity(l, l);
    for _ in 1..window {
        l_blocks.push(&power * &q_half);
        power = a_r * power;
    }
    let h_blocks: Vec<_> = l_blocks.iter().map(|b| c_r * b).collect();
    let h = block_toeplitz(&h_blocks, p, l, window);
    let lt = block_toeplitz(&l_blocks, l, l, window);

    // highest power first
    let mut obs = DMatrix::zeros(window * p, l);
    let mut obs_r = DMatrix::zeros(window * l, l);
    let mut power = DMatrix::identity(l, l);
    for i in (0..window).rev() {
        obs.view_mut((i * p, 0), (p, l)).copy_from(&(c_r * &power));
        obs_r.view_mut((i * l, 0), (l, l)).copy_from(&power);
        power = a_r * power;
    }

    let mut dd = DMatrix::zeros(window * p, window * p);
    for i in 0..window {
        dd.view_mut((i * p, i * p), (p, p)).copy_from(&r);
    }
    let dd_inv = spd_inverse(&dd)?;
    let inner = spd_inverse(&(DMatrix::identity(window * l, window * l) + h.transpose() * &dd_inv * &h))?;
    let s = symmetrize(&(&lt * inner * lt.transpose()));
    let big_inv = spd_inverse(&(&dd + &h * h.transpose()))?;
    let fisher = symmetrize(&(obs.transpose() * &big_inv * &obs));
    let j = &obs_r - &lt * h.transpose() * &big_inv * &obs;
    let sigma_max_s = SymmetricEigen::new(s.clone()).eigenvalues.max().max(0.0);

    let dim = window * l;
    let is_pd = |phi: f64| -> bool {
        let shifted = &s - DMatrix::identity(dim, dim) / phi;
        match (-shifted).cholesky() {
            Some(chol) => {
                let m = &fisher - j.transpose() * chol.solve(&j);
                min_eig(&m) > 0.0
            }
            None => false,
        }
    };
    if !is_pd(f64::MIN_POSITIVE.sqrt()) {
        return Err(RkfError::AssumptionViolation("observability Gramian of the window is singular".into()));
    }

    let phi_n = if sigma_max_s > 0.0 {
        let upper = (1.0 - 1e-12) / sigma_max_s;
        if is_pd(upper) {
            upper
        } else {
            bisect_phi(&is_pd, 0.0, upper)
        }
    } else {
        let mut hi = 1.0;
        while is_pd(hi) && hi < 1e300 {
            hi *= 2.0;
        }
        if is_pd(hi) {
            f64::INFINITY
        } else {
            bisect_phi(&is_pd, hi / 2.0, hi)
        }
    };

    let mut p_bar = DMatrix::zeros(l, l);
    for _ in 0..q {
        let innov = c_r * &p_bar * c_r.transpose() + &r;
        let gain = a_r * &p_bar * c_r.transpose() * spd_inverse(&innov)?;
        p_bar = symmetrize(&(a_r * &p_bar * a_r.transpose() - &gain * innov * gain.transpose() + q_r.entries()));
    }
    let p_bar_q_r = SymPsdMatrix::new(p_bar)?;
    let c_max = if phi_n.is_finite() && phi_n * p_bar_q_r.sigma_max() < 1.0 {
        gamma(&p_bar_q_r, phi_n).unwrap_or(f64::INFINITY)
    } else {
        f64::INFINITY
    };
    Ok(CmaxCertificate { window, riccati_steps: q, phi_n, sigma_max_s, p_bar_q_r, c_max })
}

/// Largest `phi` in `[lo, hi]` with `ok(phi)`, assuming `ok(lo)` and not `ok(hi)`.
fn bisect_phi(ok: &dyn Fn(f64) -> bool, mut lo: f64, mut hi: f64) -> f64 {
    while hi - lo > PHI_REL_TOL * hi {
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::DVector;

    fn m(r: usize, c: usize, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(r, c, v)
    }

    fn model(sys: SystemMatrices, p0: &[f64]) -> StateSpaceModel {
        let n = sys.state_dim();
        StateSpaceModel::constant(sys, DVector::zeros(n), SymPsdMatrix::from_diagonal(p0).unwrap()).unwrap()
    }

    fn scalar(a: f64, b: f64, r: f64) -> StateSpaceModel {
        let sys = SystemMatrices::new(m(1, 1, &[a]), m(1, 2, &[b, 0.0]), m(1, 1, &[1.0]), m(1, 2, &[0.0, r.sqrt()]))
            .unwrap();
        model(sys, &[1.0])
    }

    #[test]
    fn shared_noise_normalizes_to_zero() {
        let sys = SystemMatrices::new(m(1, 1, &[1.0]), m(1, 1, &[1.0]), m(1, 1, &[1.0]), m(1, 1, &[1.0])).unwrap();
        let norm = normalize_cross(&model(sys, &[1.0])).unwrap();
        assert!(norm.transformed);
        assert_relative_eq!(norm.system.a[(0, 0)], 0.0);
        assert_relative_eq!(norm.system.b[(0, 0)], 0.0);
        assert!(matches!(
            reachable_subsystem(&norm, DEFAULT_RANK_TOL),
            Err(RkfError::DegenerateModel(_))
        ));
    }

    #[test]
    fn normalization_keeps_riccati_map() {
        let sys = SystemMatrices::new(
            m(2, 2, &[0.9, 0.3, -0.2, 0.5]),
            m(2, 2, &[1.0, 0.4, 0.0, 0.2]),
            m(1, 2, &[1.0, 1.0]),
            m(1, 2, &[0.3, 1.0]),
        )
        .unwrap();
        let mdl = model(sys.clone(), &[1.0, 2.0]);
        let norm = normalize_cross(&mdl).unwrap();
        assert!(norm.system.s().norm() < 1e-12);
        assert_relative_eq!(norm.system.r(), sys.r(), epsilon = 1e-15);
        let p = mdl.init_cov();
        let a = covariance_step(&sys, FilterVariant::Kalman, 0, p, 1e-9).unwrap();
        let b = covariance_step(&norm.system, FilterVariant::Kalman, 0, p, 1e-9).unwrap();
        assert_relative_eq!(a.p_next.entries().clone(), b.p_next.entries().clone(), epsilon = 1e-12);
    }

    #[test]
    fn decoupled_modes_reachable_part() {
        let sys = SystemMatrices::new(
            m(2, 2, &[0.3, 0.0, 0.0, 0.8]),
            m(2, 2, &[1.0, 0.0, 0.0, 0.0]),
            m(1, 2, &[1.0, 1.0]),
            m(1, 2, &[0.0, 1.0]),
        )
        .unwrap();
        let norm = normalize_cross(&model(sys, &[1.0, 1.0])).unwrap();
        assert!(!norm.transformed);
        let reach = reachable_subsystem(&norm, DEFAULT_RANK_TOL).unwrap();
        assert_eq!(reach.dim(), 1);
        assert_relative_eq!(reach.a_r[(0, 0)], 0.3, epsilon = 1e-15);
        assert_relative_eq!(reach.u[(0, 0)].abs(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn kalman_fixed_point_is_dare_solution() {
        // scalar DARE: P = a^2 P R / (P + R) + Q
        let (a, q, r) = (0.8f64, 1.0f64, 0.5f64);
        let fp = fixed_point(&scalar(a, q.sqrt(), r), 0.0, 1e-13, 10_000).unwrap();
        // P^2 + (R - a^2 R - Q) P - Q R = 0
        let b = r - a * a * r - q;
        let dare = 0.5 * (-b + (b * b + 4.0 * q * r).sqrt());
        assert_relative_eq!(fp.p_inf.entries()[(0, 0)], dare, epsilon = 1e-11);
        assert_eq!(fp.theta_inf, 0.0);
    }

    #[test]
    fn fixed_point_is_stable_under_one_more_step() {
        let mdl = scalar(1.2, 1.0, 1.0);
        let tol = 1e-12;
        let fp = fixed_point(&mdl, 0.05, tol, 10_000).unwrap();
        let sys = mdl.as_constant().unwrap();
        let step = covariance_step(sys, FilterVariant::Robust { c: 0.05 }, 0, &fp.p_tilde_inf, FIXED_POINT_EPS).unwrap();
        assert!(thompson_reduced(&fp.p_inf, step.p_next.entries()) < 10.0 * tol);
    }

    #[test]
    fn non_convergence_reports_distance() {
        let err = fixed_point(&scalar(1.2, 1.0, 1.0), 0.05, 1e-12, 3).unwrap_err();
        match err {
            RkfError::NonConvergence { iterations, last_distance, .. } => {
                assert_eq!(iterations, 3);
                assert!(last_distance > 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn scalar_window_phi_is_inverse_noise() {
        // one state: H_1 = sqrt(Q), L_1 = sqrt(Q); the PD limit sits at phi = 1/R
        for (qh, r) in [(1.0, 1.0), (0.1, 1.0), (0.1, 100.0)] {
            let cert = c_max_bound(&scalar(0.5, qh, r), 2, 5).unwrap();
            assert_relative_eq!(cert.phi_n, 1.0 / r, max_relative = 1e-8);
        }
    }

    #[test]
    fn unit_scalar_bound_is_unbounded() {
        let cert = c_max_bound(&scalar(0.5, 1.0, 1.0), 2, 5).unwrap();
        assert!(cert.c_max.is_infinite());
    }

    #[test]
    fn bound_grows_with_riccati_steps() {
        let mdl = scalar(0.5, 0.1, 1.0);
        let values: Vec<f64> = [1, 5, 50].iter().map(|&q| c_max_bound(&mdl, 2, q).unwrap().c_max).collect();
        assert!(values[0].is_finite());
        assert!(values.windows(2).all(|w| w[0] <= w[1]));
        assert_relative_eq!(values[2], 4.485e-5, max_relative = 1e-3);
    }

    #[test]
    fn unobservable_reachable_part_is_rejected() {
        let sys = SystemMatrices::new(
            m(2, 2, &[0.5, 0.0, 0.0, 0.4]),
            m(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]),
            m(1, 2, &[1.0, 0.0]),
            m(1, 3, &[0.0, 0.0, 1.0]),
        )
        .unwrap();
        assert!(matches!(
            c_max_bound(&model(sys, &[1.0, 1.0]), 2, 5),
            Err(RkfError::AssumptionViolation(_))
        ));
    }
}
