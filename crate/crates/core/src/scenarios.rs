//! Ready-made models: the three-state benchmark with a singular transition
//! density, and random generators for property checks and benchmarks.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::convergence::{normalize_cross, reachable_subsystem};
use crate::error::Result;
use crate::model::{StateSpaceModel, SystemMatrices};
use crate::pseudolinalg::{SymPsdMatrix, DEFAULT_RANK_TOL};

/// Unstable three-state model driven by a single process-noise channel,
/// started from `x_0 ~ N(0, diag(1, 0, 1))`.
pub fn three_state_benchmark() -> StateSpaceModel {
    let a = DMatrix::from_row_slice(3, 3, &[2.0, 0.1, 0.1, 0.0, 0.8407, -0.3482, 0.0, 0.3482, 0.8407]);
    let b = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    let c = DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]);
    let d = DMatrix::from_row_slice(1, 2, &[0.0, 1.0]);
    let sys = SystemMatrices::new(a, b, c, d).expect("benchmark matrices are valid");
    let p0 = SymPsdMatrix::from_diagonal(&[1.0, 0.0, 1.0]).expect("diagonal is PSD");
    StateSpaceModel::constant(sys, DVector::zeros(3), p0).expect("dimensions agree")
}

pub fn random_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// Random PSD matrix of the given rank, eigenvalues in `[0.1, 2.1)`.
pub fn random_psd<R: Rng + ?Sized>(rng: &mut R, n: usize, rank: usize) -> SymPsdMatrix {
    let (q, _) = random_matrix(rng, n, n).qr().unpack();
    let values: Vec<f64> = (0..rank.min(n)).map(|_| 0.1 + 2.0 * rng.random::<f64>()).collect();
    SymPsdMatrix::from_spectrum(&q.columns(0, values.len()).into_owned(), &values, DEFAULT_RANK_TOL)
        .expect("spectrum is nonnegative")
}

fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Random constant model with `n` states and `p` outputs. The process noise
/// has rank `r < n` where possible and the spectral radius is drawn from
/// `[0.3, max_radius)`; draws are rejected until the model is reachable
/// and observable.
pub fn random_model<R: Rng + ?Sized>(rng: &mut R, n: usize, p: usize, max_radius: f64) -> Result<StateSpaceModel> {
    loop {
        let mut a = random_matrix(rng, n, n);
        let radius = spectral_radius(&a);
        if radius < 1e-6 {
            continue;
        }
        let target = 0.3 + (max_radius - 0.3) * rng.random::<f64>();
        a *= target / radius;
        let r = if n > 1 { rng.random_range(1..n) } else { 1 };
        let m = r + p;
        let b = random_matrix(rng, n, r).insert_columns(r, p, 0.0);
        let mut d = random_matrix(rng, p, m).scale(0.3);
        for i in 0..p {
            d[(i, r + i)] += 1.0;
        }
        let c = random_matrix(rng, p, n);
        let Ok(sys) = SystemMatrices::new(a, b, c, d) else { continue };
        let rank = rng.random_range(0..=n);
        let p0 = random_psd(rng, n, rank);
        let model = StateSpaceModel::constant(sys, DVector::zeros(n), p0)?;
        let Ok(reach) = reachable_subsystem(&normalize_cross(&model)?, DEFAULT_RANK_TOL) else { continue };
        if reach.dim() == n && reach.is_observable(DEFAULT_RANK_TOL) {
            return Ok(model);
        }
    }
}
