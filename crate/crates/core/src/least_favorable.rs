//! Least favorable model over a finite horizon and the evaluation of
//! arbitrary filter gains against it.
//!
//! Given a robust filter run (gains `G_t`, multipliers `theta_t` and
//! projections `H_t' H_t`), a backward pass from `Omega_T = 0` computes
//!
//! ```text
//! W    = Omega_{t+1} + theta_t H_t' H_t
//! K_v  = (I - Bg' W Bg)^-1        Bg = B - G D,  Ag = A - G C
//! F    = K_v Bg' W Ag
//! Omega_t = Ag' W Ag + F' K_v^-1 F
//! ```
//!
//! and the adversarial noise `v_t = F_t e_t + L_t eps_t` (`L_t L_t' = K_v`)
//! drives the augmented state `xi = (x, e)`:
//!
//! ```text
//! xi_{t+1} = [A  B F; 0  Ag + Bg F] xi_t + [B; Bg] L eps_t
//! y_t      = [C  D F] xi_t + D L eps_t
//! ```
//!
//! Step `t` of the model maps time `t` to `t + 1`, so a horizon `T` holds
//! steps `0..T` and evaluations return `T + 1` covariances.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Result, RkfError};
use crate::model::StateSpaceModel;
use crate::pseudolinalg::symmetrize;
use crate::robust_filter::FilterTrace;

/// Trials accumulated sequentially before partial sums are combined.
const MC_BLOCK: usize = 64;

#[derive(Debug, Clone)]
pub struct LfStep {
    pub a_tilde: DMatrix<f64>,
    pub b_tilde: DMatrix<f64>,
    pub c_tilde: DMatrix<f64>,
    pub d_tilde: DMatrix<f64>,
    pub f: DMatrix<f64>,
    pub l: DMatrix<f64>,
    pub k_v: DMatrix<f64>,
    /// Smallest eigenvalue of `I - Bg' W Bg`.
    pub margin: f64,
    /// `Omega_t`
    pub omega_plus: DMatrix<f64>,
    /// `W_{t+1}`
    pub w: DMatrix<f64>,
    /// Robust gain `G_t` the adversary was built against.
    pub gain: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct LeastFavorableModel {
    pub steps: Vec<LfStep>,
    pub init_mean: DVector<f64>,
    pub init_cov: DMatrix<f64>,
    /// `Pi_0 = [[P0, P0], [P0, P0]]`
    pub init_cov_aug: DMatrix<f64>,
}

impl LeastFavorableModel {
    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    pub fn state_dim(&self) -> usize {
        self.init_mean.len()
    }

    pub fn obs_dim(&self) -> usize {
        self.steps.first().map_or(0, |s| s.c_tilde.nrows())
    }

    /// `min_t lambda_min(K_v)`.
    pub fn min_kv_eigenvalue(&self) -> f64 {
        self.steps
            .iter()
            .map(|s| SymmetricEigen::new(s.k_v.clone()).eigenvalues.min())
            .fold(f64::INFINITY, f64::min)
    }
}

fn stack_rows(top: &DMatrix<f64>, bottom: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(top.nrows() + bottom.nrows(), top.ncols());
    out.view_mut((0, 0), top.shape()).copy_from(top);
    out.view_mut((top.nrows(), 0), bottom.shape()).copy_from(bottom);
    out
}

/// Backward pass over the first `horizon` steps of `trace`.
pub fn build_lf_model(model: &StateSpaceModel, trace: &FilterTrace, horizon: usize) -> Result<LeastFavorableModel> {
    if trace.horizon() < horizon {
        return Err(RkfError::InvalidArgument(format!(
            "filter trace covers {} steps, horizon {horizon} requested",
            trace.horizon()
        )));
    }
    let n = model.state_dim();
    let mut omega = DMatrix::<f64>::zeros(n, n);
    let mut steps = Vec::with_capacity(horizon);
    for t in (0..horizon).rev() {
        let sys = model.at(t)?;
        let state = &trace.states[t + 1];
        let g = &state.gain;
        let ag = &sys.a - g * &sys.c;
        let bg = &sys.b - g * &sys.d;
        let m = sys.noise_dim();

        let w = symmetrize(&(&omega + state.projection.scale(state.theta)));
        let margin_mat = symmetrize(&(DMatrix::identity(m, m) - bg.transpose() * &w * &bg));
        let eig = SymmetricEigen::new(margin_mat.clone());
        let margin = eig.eigenvalues.min();
        if !(margin > 0.0) {
            return Err(RkfError::AdversaryInfeasible { t, min_eig: margin });
        }
        let v = &eig.eigenvectors;
        let inv = DMatrix::from_diagonal(&eig.eigenvalues.map(|mu| 1.0 / mu));
        let inv_sqrt = DMatrix::from_diagonal(&eig.eigenvalues.map(|mu| mu.sqrt().recip()));
        let k_v = symmetrize(&(v * inv * v.transpose()));
        let l = symmetrize(&(v * inv_sqrt * v.transpose()));
        let f = &k_v * bg.transpose() * &w * &ag;
        let omega_t = symmetrize(&(ag.transpose() * &w * &ag + f.transpose() * &margin_mat * &f));

        let mut a_tilde = DMatrix::zeros(2 * n, 2 * n);
        a_tilde.view_mut((0, 0), (n, n)).copy_from(&sys.a);
        a_tilde.view_mut((0, n), (n, n)).copy_from(&(&sys.b * &f));
        a_tilde.view_mut((n, n), (n, n)).copy_from(&(&ag + &bg * &f));
        let b_tilde = stack_rows(&sys.b, &bg) * &l;
        let p = sys.obs_dim();
        let mut c_tilde = DMatrix::zeros(p, 2 * n);
        c_tilde.view_mut((0, 0), (p, n)).copy_from(&sys.c);
        c_tilde.view_mut((0, n), (p, n)).copy_from(&(&sys.d * &f));
        let d_tilde = &sys.d * &l;

        steps.push(LfStep {
            a_tilde,
            b_tilde,
            c_tilde,
            d_tilde,
            f,
            l,
            k_v,
            margin,
            omega_plus: omega_t.clone(),
            w,
            gain: g.clone(),
        });
        omega = omega_t;
    }
    steps.reverse();

    let p0 = model.init_cov().entries().clone();
    let mut init_cov_aug = DMatrix::zeros(2 * n, 2 * n);
    for (i, j) in [(0, 0), (0, n), (n, 0), (n, n)] {
        init_cov_aug.view_mut((i, j), (n, n)).copy_from(&p0);
    }
    Ok(LeastFavorableModel { steps, init_mean: model.init_mean().clone(), init_cov: p0, init_cov_aug })
}

/// Covariances `Pi_0 .. Pi_T` of the augmented error `(e', e)`.
#[derive(Debug, Clone)]
pub struct AugmentedErrorCov {
    pub pi: Vec<DMatrix<f64>>,
    n: usize,
}

impl AugmentedErrorCov {
    /// Error covariance of the evaluated filter at `t`.
    pub fn block11(&self, t: usize) -> DMatrix<f64> {
        self.pi[t].view((0, 0), (self.n, self.n)).into_owned()
    }

    pub fn block12(&self, t: usize) -> DMatrix<f64> {
        self.pi[t].view((0, self.n), (self.n, self.n)).into_owned()
    }

    /// Error covariance of the robust filter the adversary was built against.
    pub fn block22(&self, t: usize) -> DMatrix<f64> {
        self.pi[t].view((self.n, self.n), (self.n, self.n)).into_owned()
    }

    pub fn traces11(&self) -> Vec<f64> {
        (0..self.pi.len()).map(|t| self.block11(t).trace()).collect()
    }
}

fn check_gains(gains: &[DMatrix<f64>], horizon: usize, n: usize, p: usize) -> Result<()> {
    if gains.len() < horizon {
        return Err(RkfError::InvalidArgument(format!("{} gains for horizon {horizon}", gains.len())));
    }
    if let Some(g) = gains.iter().find(|g| g.shape() != (n, p)) {
        return Err(RkfError::Dimension(format!("gain is {}x{}, expected {n}x{p}", g.nrows(), g.ncols())));
    }
    Ok(())
}

/// Closed-loop matrices `(A~ - [G'; 0] C~, B~ - [G'; 0] D~)` of step `t`.
fn closed_loop(step: &LfStep, gain: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = gain.nrows();
    let mut a = step.a_tilde.clone();
    let mut b = step.b_tilde.clone();
    let gc = gain * &step.c_tilde;
    let gd = gain * &step.d_tilde;
    let mut top = a.view_mut((0, 0), (n, 2 * n));
    top -= &gc;
    let mut top = b.view_mut((0, 0), (n, b.ncols()));
    top -= &gd;
    (a, b)
}

/// Lyapunov recursion for the evaluated gains `G'_0 .. G'_{T-1}`.
pub fn lyapunov_eval(lf: &LeastFavorableModel, gains: &[DMatrix<f64>]) -> Result<AugmentedErrorCov> {
    let n = lf.state_dim();
    check_gains(gains, lf.horizon(), n, lf.obs_dim())?;
    let mut pi = Vec::with_capacity(lf.horizon() + 1);
    pi.push(lf.init_cov_aug.clone());
    for (t, step) in lf.steps.iter().enumerate() {
        let (a, b) = closed_loop(step, &gains[t]);
        let next = &a * &pi[t] * a.transpose() + &b * b.transpose();
        pi.push(symmetrize(&next));
    }
    Ok(AugmentedErrorCov { pi, n })
}

/// Error covariances `E_0 .. E_T` of gains `G'` under the nominal model, from `E_0 = P~_0`.
pub fn nominal_eval(model: &StateSpaceModel, gains: &[DMatrix<f64>], horizon: usize) -> Result<Vec<DMatrix<f64>>> {
    check_gains(gains, horizon, model.state_dim(), model.obs_dim())?;
    let mut out = Vec::with_capacity(horizon + 1);
    out.push(model.init_cov().entries().clone());
    for (t, g) in gains.iter().take(horizon).enumerate() {
        let sys = model.at(t)?;
        let ag = &sys.a - g * &sys.c;
        let bg = &sys.b - g * &sys.d;
        let next = &ag * &out[t] * ag.transpose() + &bg * bg.transpose();
        out.push(symmetrize(&next));
    }
    Ok(out)
}

/// One sampled path: `states[t] = x_t`, `errors[t] = e_t` for `t = 0..=T`,
/// `observations[t] = y_t` for `t = 0..T`.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePath {
    pub states: Vec<DVector<f64>>,
    pub errors: Vec<DVector<f64>>,
    pub observations: Vec<DVector<f64>>,
}

/// RNG for trial `index` of a run seeded with `seed`.
pub fn trial_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn normals(rng: &mut ChaCha8Rng, k: usize) -> DVector<f64> {
    DVector::from_iterator(k, (0..k).map(|_| StandardNormal.sample(rng)))
}

/// Symmetric square root of a PSD matrix, negative round-off clipped.
fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let root = DMatrix::from_diagonal(&eig.eigenvalues.map(|s| s.max(0.0).sqrt()));
    &eig.eigenvectors * root * eig.eigenvectors.transpose()
}

/// Draws `e_0 ~ N(0, P~_0)`; the first `n` normals of every path.
fn initial_error(rng: &mut ChaCha8Rng, root: &DMatrix<f64>) -> DVector<f64> {
    root * normals(rng, root.nrows())
}

/// Path of the least favorable model from `x_0 = x^_0 + e_0`.
pub fn simulate_lf(lf: &LeastFavorableModel, seed: u64) -> SamplePath {
    let mut rng = trial_rng(seed, 0);
    let n = lf.state_dim();
    let e0 = initial_error(&mut rng, &psd_sqrt(&lf.init_cov));
    let mut xi = DVector::zeros(2 * n);
    xi.rows_mut(0, n).copy_from(&(&lf.init_mean + &e0));
    xi.rows_mut(n, n).copy_from(&e0);
    let mut path = SamplePath {
        states: vec![xi.rows(0, n).into_owned()],
        errors: vec![e0],
        observations: Vec::with_capacity(lf.horizon()),
    };
    for step in &lf.steps {
        let eps = normals(&mut rng, step.b_tilde.ncols());
        path.observations.push(&step.c_tilde * &xi + &step.d_tilde * &eps);
        xi = &step.a_tilde * &xi + &step.b_tilde * &eps;
        path.states.push(xi.rows(0, n).into_owned());
        path.errors.push(xi.rows(n, n).into_owned());
    }
    path
}

/// Path of the nominal model with the same draw order as [`simulate_lf`];
/// `errors` is left empty because no filter is attached.
pub fn simulate_nominal(model: &StateSpaceModel, horizon: usize, seed: u64) -> Result<SamplePath> {
    let mut rng = trial_rng(seed, 0);
    let e0 = initial_error(&mut rng, &psd_sqrt(model.init_cov().entries()));
    let mut x = model.init_mean() + e0;
    let mut path = SamplePath { states: vec![x.clone()], errors: Vec::new(), observations: Vec::new() };
    for t in 0..horizon {
        let sys = model.at(t)?;
        let v = normals(&mut rng, sys.noise_dim());
        path.observations.push(&sys.c * &x + &sys.d * &v);
        x = &sys.a * &x + &sys.b * &v;
        path.states.push(x.clone());
    }
    Ok(path)
}

/// Sample second moments `E[e'_t e'_t']`, `t = 0..=T`, for each gain sequence.
#[derive(Debug, Clone)]
pub struct MonteCarloMoments {
    pub trials: usize,
    /// `moments[k][t]`
    pub moments: Vec<Vec<DMatrix<f64>>>,
}

impl MonteCarloMoments {
    pub fn traces(&self, k: usize) -> Vec<f64> {
        self.moments[k].iter().map(|m| m.trace()).collect()
    }
}

/// Runs `trials` independent least favorable paths; trial `i` draws from
/// `trial_rng(seed, i)`. Each evaluated error `e'` starts from `e_0` and is
/// propagated through its own error recursion, so the result depends only
/// on `(seed, trials)` and not on scheduling.
pub fn monte_carlo_eval(
    lf: &LeastFavorableModel,
    gain_sets: &[Vec<DMatrix<f64>>],
    trials: usize,
    seed: u64,
) -> Result<MonteCarloMoments> {
    let n = lf.state_dim();
    for gains in gain_sets {
        check_gains(gains, lf.horizon(), n, lf.obs_dim())?;
    }
    let loops: Vec<Vec<_>> = gain_sets
        .iter()
        .map(|gains| lf.steps.iter().zip(gains).map(|(s, g)| closed_loop(s, g)).collect())
        .collect();
    let root = psd_sqrt(&lf.init_cov);
    let horizon = lf.horizon();
    let zero = || vec![vec![DMatrix::<f64>::zeros(n, n); horizon + 1]; gain_sets.len()];

    let run_block = |block: usize| {
        let mut acc = zero();
        let hi = ((block + 1) * MC_BLOCK).min(trials);
        for i in block * MC_BLOCK..hi {
            let mut rng = trial_rng(seed, i as u64);
            let e0 = initial_error(&mut rng, &root);
            let eps: Vec<_> = lf.steps.iter().map(|s| normals(&mut rng, s.b_tilde.ncols())).collect();
            for (k, cl) in loops.iter().enumerate() {
                let mut z = DVector::zeros(2 * n);
                z.rows_mut(0, n).copy_from(&e0);
                z.rows_mut(n, n).copy_from(&e0);
                acc[k][0] += &e0 * e0.transpose();
                for (t, (a, b)) in cl.iter().enumerate() {
                    z = a * &z + b * &eps[t];
                    let ep = z.rows(0, n);
                    acc[k][t + 1] += ep * ep.transpose();
                }
            }
        }
        acc
    };
    let blocks = trials.div_ceil(MC_BLOCK);
    let partial: Vec<_> = (0..blocks).into_par_iter().map(run_block).collect();
    let mut total = zero();
    for part in partial {
        for (tk, pk) in total.iter_mut().zip(part) {
            for (tt, pt) in tk.iter_mut().zip(pk) {
                *tt += pt;
            }
        }
    }
    if trials > 0 {
        let scale = 1.0 / trials as f64;
        for m in total.iter_mut().flatten() {
            *m *= scale;
        }
    }
    Ok(MonteCarloMoments { trials, moments: total })
}
