//! Nominal Gauss-Markov state-space models
//!
//! ```text
//! x_{t+1} = A_t x_t + B_t v_t
//! y_t     = C_t x_t + D_t v_t,      v_t ~ N(0, I)
//! ```
//!
//! `B_t` may have deficient rank, so the transition density is degenerate.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, RkfError};
use crate::pseudolinalg::{column_space, spd_inverse, SymPsdMatrix, DEFAULT_RANK_TOL};

#[derive(Debug, Clone, PartialEq)]
pub struct SystemMatrices {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

impl SystemMatrices {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, d: DMatrix<f64>) -> Result<Self> {
        let m = Self { a, b, c, d };
        m.validate()?;
        Ok(m)
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn obs_dim(&self) -> usize {
        self.c.nrows()
    }

    pub fn noise_dim(&self) -> usize {
        self.b.ncols()
    }

    /// `B B^T`
    pub fn q(&self) -> DMatrix<f64> {
        &self.b * self.b.transpose()
    }

    /// `D D^T`
    pub fn r(&self) -> DMatrix<f64> {
        &self.d * self.d.transpose()
    }

    /// `B D^T`
    pub fn s(&self) -> DMatrix<f64> {
        &self.b * self.d.transpose()
    }

    fn validate(&self) -> Result<()> {
        let n = self.a.nrows();
        let dim = |what: &str, got: (usize, usize), want: (usize, usize)| {
            if got != want {
                Err(RkfError::Dimension(format!(
                    "{what} is {}x{}, expected {}x{}",
                    got.0, got.1, want.0, want.1
                )))
            } else {
                Ok(())
            }
        };
        if n == 0 || !self.a.is_square() {
            return Err(RkfError::Dimension(format!(
                "A must be square and non-empty, got {}x{}",
                self.a.nrows(),
                self.a.ncols()
            )));
        }
        let p = self.c.nrows();
        let m = self.b.ncols();
        if p == 0 || m == 0 {
            return Err(RkfError::Dimension("C and B must be non-empty".into()));
        }
        dim("B", self.b.shape(), (n, m))?;
        dim("C", self.c.shape(), (p, n))?;
        dim("D", self.d.shape(), (p, m))?;
        for (name, mat) in [("A", &self.a), ("B", &self.b), ("C", &self.c), ("D", &self.d)] {
            if mat.iter().any(|v| !v.is_finite()) {
                return Err(RkfError::InvalidArgument(format!("{name} has non-finite entries")));
            }
        }
        spd_inverse(&self.r()).map_err(|_| {
            RkfError::AssumptionViolation("D D^T must be positive definite".into())
        })?;
        let mut stacked = DMatrix::zeros(n + p, m);
        stacked.view_mut((0, 0), (n, m)).copy_from(&self.b);
        stacked.view_mut((n, 0), (p, m)).copy_from(&self.d);
        let (image, _) = column_space(&stacked, DEFAULT_RANK_TOL);
        if image.ncols() != m {
            return Err(RkfError::AssumptionViolation(format!(
                "[B; D] must have full column rank {m}, has rank {}",
                image.ncols()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Dynamics {
    Constant(SystemMatrices),
    /// One quadruple per step; the noise dimension may change with `t`.
    TimeVarying(Vec<SystemMatrices>),
}

#[derive(Debug, Clone)]
pub struct StateSpaceModel {
    dynamics: Dynamics,
    init_mean: DVector<f64>,
    init_cov: SymPsdMatrix,
}

impl StateSpaceModel {
    pub fn constant(
        system: SystemMatrices,
        init_mean: DVector<f64>,
        init_cov: SymPsdMatrix,
    ) -> Result<Self> {
        Self::new(Dynamics::Constant(system), init_mean, init_cov)
    }

    pub fn new(dynamics: Dynamics, init_mean: DVector<f64>, init_cov: SymPsdMatrix) -> Result<Self> {
        let first = match &dynamics {
            Dynamics::Constant(s) => s,
            Dynamics::TimeVarying(steps) => steps
                .first()
                .ok_or_else(|| RkfError::InvalidArgument("empty time-varying model".into()))?,
        };
        let (n, p) = (first.state_dim(), first.obs_dim());
        if let Dynamics::TimeVarying(steps) = &dynamics {
            for (t, s) in steps.iter().enumerate() {
                if s.state_dim() != n || s.obs_dim() != p {
                    return Err(RkfError::Dimension(format!(
                        "step {t} has (n, p) = ({}, {}), expected ({n}, {p})",
                        s.state_dim(),
                        s.obs_dim()
                    )));
                }
            }
        }
        if init_mean.len() != n || init_cov.dim() != n {
            return Err(RkfError::Dimension(format!(
                "initial mean/covariance of size {}/{} for state dimension {n}",
                init_mean.len(),
                init_cov.dim()
            )));
        }
        Ok(Self { dynamics, init_mean, init_cov })
    }

    pub fn dynamics(&self) -> &Dynamics {
        &self.dynamics
    }

    pub fn init_mean(&self) -> &DVector<f64> {
        &self.init_mean
    }

    pub fn init_cov(&self) -> &SymPsdMatrix {
        &self.init_cov
    }

    pub fn with_init_cov(&self, init_cov: SymPsdMatrix) -> Result<Self> {
        Self::new(self.dynamics.clone(), self.init_mean.clone(), init_cov)
    }

    pub fn state_dim(&self) -> usize {
        self.init_mean.len()
    }

    pub fn obs_dim(&self) -> usize {
        self.first().obs_dim()
    }

    fn first(&self) -> &SystemMatrices {
        match &self.dynamics {
            Dynamics::Constant(s) => s,
            Dynamics::TimeVarying(steps) => &steps[0],
        }
    }

    /// Matrices in force at step `t`.
    pub fn at(&self, t: usize) -> Result<&SystemMatrices> {
        match &self.dynamics {
            Dynamics::Constant(s) => Ok(s),
            Dynamics::TimeVarying(steps) => steps.get(t).ok_or_else(|| {
                RkfError::InvalidArgument(format!(
                    "time-varying model defines {} steps, step {t} requested",
                    steps.len()
                ))
            }),
        }
    }

    pub fn as_constant(&self) -> Result<&SystemMatrices> {
        match &self.dynamics {
            Dynamics::Constant(s) => Ok(s),
            Dynamics::TimeVarying(_) => Err(RkfError::InvalidArgument(
                "operation requires a constant-parameter model".into(),
            )),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(r: usize, c: usize, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(r, c, v)
    }

    #[test]
    fn rejects_singular_measurement_noise() {
        let err = SystemMatrices::new(m(1, 1, &[1.0]), m(1, 1, &[1.0]), m(1, 1, &[1.0]), m(1, 1, &[0.0]))
            .unwrap_err();
        assert!(matches!(err, RkfError::AssumptionViolation(_)));
    }

    #[test]
    fn rejects_rank_deficient_noise_input() {
        // second noise channel enters nowhere
        let err = SystemMatrices::new(
            m(1, 1, &[1.0]),
            m(1, 2, &[1.0, 0.0]),
            m(1, 1, &[1.0]),
            m(1, 2, &[1.0, 0.0]),
        )
        .unwrap_err();
        assert!(matches!(err, RkfError::AssumptionViolation(_)));
    }

    #[test]
    fn rejects_dimension_mismatch() {
        let err = SystemMatrices::new(m(3, 3, &[0.0; 9]), m(2, 1, &[1.0, 0.0]), m(1, 3, &[1.0, 0.0, 0.0]), m(1, 1, &[1.0]))
            .unwrap_err();
        assert!(matches!(err, RkfError::Dimension(_)));
    }
}
