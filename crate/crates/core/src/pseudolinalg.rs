//! Primitives for singular symmetric positive semidefinite matrices.
//!
//! Every covariance in the crate is held as a [`SymPsdMatrix`]: the entries
//! together with a cached eigendecomposition sorted in descending order. The
//! numerical rank is the number of eigenvalues strictly above
//! `rank_tol * sigma_max`; pseudo-inverse, pseudo-determinant and image basis
//! all act on exactly those retained eigenpairs, so they agree with each other
//! by construction.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Result, RkfError};

/// Default relative eigenvalue cutoff for numerical rank.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// Relative Frobenius asymmetry above which input is rejected instead of symmetrized.
const ASYMMETRY_REJECT: f64 = 1e-8;

/// Image-equality tolerance used when two matrices must share a support.
pub const SUPPORT_TOL: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct SymPsdMatrix {
    entries: DMatrix<f64>,
    eigenvalues: DVector<f64>,
    eigenvectors: DMatrix<f64>,
    rank_tol: f64,
    rank: usize,
}

impl SymPsdMatrix {
    /// Symmetrizes `m`, clamps round-off negative eigenvalues to zero and
    /// caches the sorted eigendecomposition, using [`DEFAULT_RANK_TOL`].
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        Self::with_tol(m, DEFAULT_RANK_TOL)
    }

    pub fn with_tol(m: DMatrix<f64>, rank_tol: f64) -> Result<Self> {
        if !m.is_square() {
            return Err(RkfError::Dimension(format!(
                "expected a square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if !(rank_tol.is_finite() && rank_tol >= 0.0) {
            return Err(RkfError::InvalidTolerance(format!("rank_tol = {rank_tol}")));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(RkfError::NotPsd("non-finite entry".into()));
        }
        let n = m.nrows();
        let norm = m.norm();
        let asym = (&m - m.transpose()).norm();
        if norm > 0.0 && asym > ASYMMETRY_REJECT * norm {
            return Err(RkfError::NotPsd(format!(
                "relative asymmetry {:.3e}",
                asym / norm
            )));
        }
        let sym = symmetrize(&m);
        if n == 0 {
            return Ok(Self {
                entries: sym,
                eigenvalues: DVector::zeros(0),
                eigenvectors: DMatrix::zeros(0, 0),
                rank_tol,
                rank: 0,
            });
        }

        let eig = SymmetricEigen::new(sym.clone());
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));

        let mut values = DVector::zeros(n);
        let mut vectors = DMatrix::zeros(n, n);
        for (k, &i) in order.iter().enumerate() {
            values[k] = eig.eigenvalues[i];
            let mut col = eig.eigenvectors.column(i).into_owned();
            // deterministic sign: largest-magnitude component positive
            let pivot = col.iamax();
            if col[pivot] < 0.0 {
                col.neg_mut();
            }
            vectors.set_column(k, &col);
        }

        let sigma_max = values.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        let neg_floor = rank_tol.max(64.0 * f64::EPSILON) * sigma_max;
        let min = values[n - 1];
        if min < -neg_floor {
            return Err(RkfError::NotPsd(format!(
                "eigenvalue {min:.3e} below -{neg_floor:.3e}"
            )));
        }
        let clamped = min < 0.0;
        values.iter_mut().for_each(|v| *v = v.max(0.0));

        let entries = if clamped {
            rebuild(&vectors, values.as_slice())
        } else {
            sym
        };
        let threshold = rank_tol * values[0];
        let rank = values.iter().filter(|&&v| v > threshold && v > 0.0).count();
        Ok(Self { entries, eigenvalues: values, eigenvectors: vectors, rank_tol, rank })
    }

    pub fn zeros(n: usize) -> Self {
        Self::new(DMatrix::zeros(n, n)).expect("zero matrix is PSD")
    }

    pub fn identity(n: usize) -> Self {
        Self::new(DMatrix::identity(n, n)).expect("identity is PSD")
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    /// Builds `V diag(values) V^T` from orthonormal columns `vectors`.
    pub fn from_spectrum(vectors: &DMatrix<f64>, values: &[f64], rank_tol: f64) -> Result<Self> {
        if vectors.ncols() != values.len() {
            return Err(RkfError::Dimension(format!(
                "{} eigenvectors for {} eigenvalues",
                vectors.ncols(),
                values.len()
            )));
        }
        Self::with_tol(rebuild(vectors, values), rank_tol)
    }

    /// Same entries, different rank cutoff.
    pub fn retol(&self, rank_tol: f64) -> Result<Self> {
        Self::with_tol(self.entries.clone(), rank_tol)
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_entries(self) -> DMatrix<f64> {
        self.entries
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn rank_tol(&self) -> f64 {
        self.rank_tol
    }

    /// All eigenvalues, descending, clamped at zero.
    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    /// Eigenvectors as columns, in the order of [`Self::eigenvalues`].
    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    pub fn sigma_max(&self) -> f64 {
        if self.dim() == 0 {
            0.0
        } else {
            self.eigenvalues[0]
        }
    }

    /// The eigenvalues counted in the numerical rank.
    pub fn retained_eigenvalues(&self) -> &[f64] {
        &self.eigenvalues.as_slice()[..self.rank]
    }

    pub fn min_nonnull_eigenvalue(&self) -> Option<f64> {
        self.retained_eigenvalues().last().copied()
    }

    pub fn trace(&self) -> f64 {
        self.entries.trace()
    }

    pub fn pseudo_inverse(&self) -> SymPsdMatrix {
        let basis = self.image_basis();
        let inv: Vec<f64> = self.retained_eigenvalues().iter().map(|v| 1.0 / v).collect();
        Self::from_spectrum(&basis, &inv, self.rank_tol).expect("pseudo-inverse of PSD is PSD")
    }

    /// Product of the retained eigenvalues; 1 for rank 0.
    pub fn pseudo_det(&self) -> f64 {
        self.retained_eigenvalues().iter().product()
    }

    pub fn ln_pseudo_det(&self) -> f64 {
        self.retained_eigenvalues().iter().map(|v| v.ln()).sum()
    }

    /// Orthonormal basis `H^T` (n x r) of the numerical image.
    pub fn image_basis(&self) -> DMatrix<f64> {
        self.eigenvectors.columns(0, self.rank).into_owned()
    }

    /// Orthonormal basis (n x (n - r)) of the numerical kernel.
    pub fn kernel_basis(&self) -> DMatrix<f64> {
        let n = self.dim();
        self.eigenvectors.columns(self.rank, n - self.rank).into_owned()
    }

    /// Orthogonal projection `H^T H` onto the numerical image.
    pub fn projection(&self) -> DMatrix<f64> {
        let h = self.image_basis();
        &h * h.transpose()
    }

    /// Symmetric PSD square root over the full spectrum.
    pub fn sqrt(&self) -> DMatrix<f64> {
        let roots: Vec<f64> = self.eigenvalues.iter().map(|v| v.sqrt()).collect();
        rebuild(&self.eigenvectors, &roots)
    }

    /// `B^T M B` as a new PSD matrix with the same rank tolerance.
    pub fn congruence(&self, b: &DMatrix<f64>) -> Result<SymPsdMatrix> {
        if b.nrows() != self.dim() {
            return Err(RkfError::Dimension(format!(
                "congruence by {}x{} on {}x{}",
                b.nrows(),
                b.ncols(),
                self.dim(),
                self.dim()
            )));
        }
        Self::with_tol(b.transpose() * &self.entries * b, self.rank_tol)
    }
}

impl PartialEq for SymPsdMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.entries == other.entries
    }
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn rebuild(vectors: &DMatrix<f64>, values: &[f64]) -> DMatrix<f64> {
    let n = vectors.nrows();
    let mut scaled = vectors.clone();
    for (k, &v) in values.iter().enumerate() {
        scaled.column_mut(k).scale_mut(v);
    }
    let m = if values.is_empty() {
        DMatrix::zeros(n, n)
    } else {
        scaled * vectors.transpose()
    };
    symmetrize(&m)
}

fn check_same_dim(a: &SymPsdMatrix, b: &SymPsdMatrix) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(RkfError::Dimension(format!("{} vs {}", a.dim(), b.dim())));
    }
    Ok(())
}

/// Spectral norm of the difference of the two image projections.
pub fn subspace_distance(a: &SymPsdMatrix, b: &SymPsdMatrix) -> Result<f64> {
    check_same_dim(a, b)?;
    Ok(spectral_norm_sym(&(a.projection() - b.projection())))
}

/// Largest absolute eigenvalue of a symmetric matrix.
pub fn spectral_norm_sym(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .fold(0.0f64, |acc, v| acc.max(v.abs()))
}

/// Thompson part metric `ln max{sigma_max(Y^-1 X), sigma_max(X^-1 Y)}`,
/// evaluated on the shared numerical image of the two matrices.
pub fn thompson_distance(a: &SymPsdMatrix, b: &SymPsdMatrix) -> Result<f64> {
    let gap = subspace_distance(a, b)?;
    if gap >= SUPPORT_TOL || a.rank() != b.rank() {
        return Err(RkfError::DistinctSupport { image_gap: gap, mean_residual: 0.0 });
    }
    if a.rank() == 0 {
        return Ok(0.0);
    }
    let h = a.image_basis();
    let x = SymPsdMatrix::with_tol(h.transpose() * a.entries() * &h, a.rank_tol)?;
    let y = h.transpose() * b.entries() * &h;
    Ok(thompson_reduced(&x, &y))
}

/// Thompson metric between `x` (positive definite) and symmetric `y`.
pub(crate) fn thompson_reduced(x: &SymPsdMatrix, y: &DMatrix<f64>) -> f64 {
    let inv_sqrt: Vec<f64> = x.eigenvalues().iter().map(|v| 1.0 / v.sqrt()).collect();
    let w = rebuild(x.eigenvectors(), &inv_sqrt);
    let z = symmetrize(&(&w * y * &w));
    let mu = SymmetricEigen::new(z).eigenvalues;
    let mu_max = mu.max();
    let mu_min = mu.min();
    if mu_min <= 0.0 {
        return f64::INFINITY;
    }
    mu_max.ln().max(-mu_min.ln())
}

/// Column space of an arbitrary matrix via SVD: returns orthonormal bases
/// of the image and of its orthogonal complement in R^rows.
pub fn column_space(m: &DMatrix<f64>, rank_tol: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = m.nrows();
    if m.ncols() == 0 || n == 0 {
        return (DMatrix::zeros(n, 0), DMatrix::identity(n, n));
    }
    // Image of m equals the image of the PSD matrix m m^T; its eigenvectors
    // give a full orthonormal basis of R^n regardless of the column count.
    let svd = m.clone().svd(true, false);
    let s = &svd.singular_values;
    let s_max = s.max();
    let rank = s.iter().filter(|&&v| v > rank_tol * s_max && v > 0.0).count();
    let u = svd.u.expect("left singular vectors requested");
    let mut image = DMatrix::zeros(n, rank);
    let mut k = 0;
    for (j, &v) in s.iter().enumerate() {
        if v > rank_tol * s_max && v > 0.0 {
            image.set_column(k, &u.column(j));
            k += 1;
        }
    }
    // complement: eigenvalue-one eigenvectors of the complementary projection
    let residual = symmetrize(&(DMatrix::identity(n, n) - &image * image.transpose()));
    let eig = SymmetricEigen::new(residual);
    let keep: Vec<usize> = (0..n).filter(|&j| eig.eigenvalues[j] > 0.5).collect();
    let mut complement = DMatrix::zeros(n, keep.len());
    for (k, &j) in keep.iter().enumerate() {
        complement.set_column(k, &eig.eigenvectors.column(j));
    }
    (image, complement)
}

/// Inverse of a symmetric positive definite matrix, or the failing minimum eigenvalue.
pub fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = symmetrize(m);
    match sym.clone().cholesky() {
        Some(ch) => Ok(ch.inverse()),
        None => {
            let min_eig = if sym.nrows() == 0 {
                0.0
            } else {
                SymmetricEigen::new(sym).eigenvalues.min()
            };
            Err(RkfError::IllPosedObservation { min_eig })
        }
    }
}
