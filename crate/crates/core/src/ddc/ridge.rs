//! Multi-output ridge regression through the normal equations.

use nalgebra::{Cholesky, DMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// `min ‖Y − F w‖² + ridge ‖w‖²` over an `N × K` feature matrix and `N × P`
/// targets, optionally with per-row weights.
#[derive(Debug, Clone, Copy)]
pub struct RegressionProblem<'a> {
    pub features: &'a DMatrix<f64>,
    pub targets: &'a DMatrix<f64>,
    pub ridge: f64,
    pub weights: Option<&'a [f64]>,
}

impl<'a> RegressionProblem<'a> {
    pub fn new(features: &'a DMatrix<f64>, targets: &'a DMatrix<f64>, ridge: f64) -> Self {
        Self {
            features,
            targets,
            ridge,
            weights: None,
        }
    }

    pub fn weighted(mut self, weights: &'a [f64]) -> Self {
        self.weights = Some(weights);
        self
    }

    fn validate(&self) -> Result<()> {
        let n = self.features.nrows();
        if n == 0 {
            return Err(Error::InvalidArgument("regression needs >= 1 row".into()));
        }
        check_len("regression targets rows", n, self.targets.nrows())?;
        if let Some(w) = self.weights {
            check_len("regression weights", n, w.len())?;
            if w.iter().any(|v| !(*v >= 0.0)) {
                return Err(Error::InvalidArgument("weights must be >= 0".into()));
            }
        }
        if !(self.ridge >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "ridge must be >= 0, got {}",
                self.ridge
            )));
        }
        if self.features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("regression features".into()));
        }
        if self.targets.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("regression targets".into()));
        }
        Ok(())
    }

    /// (FᵀWF, FᵀWY).
    pub fn normal_equations(&self) -> Result<NormalEquations> {
        self.validate()?;
        let (gram, cross) = match self.weights {
            None => (
                self.features.tr_mul(self.features),
                self.features.tr_mul(self.targets),
            ),
            Some(w) => {
                let mut fw = self.features.clone();
                for (mut row, &wi) in fw.row_iter_mut().zip(w) {
                    row *= wi;
                }
                (fw.tr_mul(self.features), fw.tr_mul(self.targets))
            }
        };
        let mass = self
            .weights
            .map_or(self.features.nrows() as f64, |w| w.iter().sum());
        Ok(NormalEquations { gram, cross, mass })
    }
}

/// Accumulated normal-equation statistics; supports exponential averaging
/// across refits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalEquations {
    pub gram: DMatrix<f64>,
    pub cross: DMatrix<f64>,
    /// Number of rows (or total weight) summarised.
    pub mass: f64,
}

impl NormalEquations {
    /// `self ← decay·self + (1 − decay)·fresh`.
    pub fn blend(&mut self, fresh: &NormalEquations, decay: f64) {
        self.gram = &self.gram * decay + &fresh.gram * (1.0 - decay);
        self.cross = &self.cross * decay + &fresh.cross * (1.0 - decay);
        self.mass = self.mass * decay + fresh.mass * (1.0 - decay);
    }

    /// Solves `(G + ridge I) w = C` by Cholesky.
    pub fn solve(&self, ridge: f64) -> Result<DMatrix<f64>> {
        let k = self.gram.nrows();
        let mut a = self.gram.clone();
        for i in 0..k {
            a[(i, i)] += ridge;
        }
        let chol = Cholesky::new(a).ok_or(Error::Factorization { ridge })?;
        let w = chol.solve(&self.cross);
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::Factorization { ridge });
        }
        Ok(w)
    }
}

/// Ridge weights, `K × P`.
pub fn solve_ridge(problem: &RegressionProblem<'_>) -> Result<DMatrix<f64>> {
    problem.normal_equations()?.solve(problem.ridge)
}

/// Root-mean-square residual per target entry.
pub fn rms_residual(features: &DMatrix<f64>, targets: &DMatrix<f64>, w: &DMatrix<f64>) -> f64 {
    let r = features * w - targets;
    (r.norm_squared() / r.len().max(1) as f64).sqrt()
}
