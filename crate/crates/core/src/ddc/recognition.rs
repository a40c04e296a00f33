use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::ridge::{rms_residual, NormalEquations, RegressionProblem};
use super::FitMode;
use crate::error::{check_len, Error, Result};
use crate::wakesleep::SleepBatch;

/// Hierarchical recognition model
///
/// ```text
/// h₁ = max(W x + c, 0)  W, c fixed, M × D_x
/// r₁ = φ₁ h₁
/// r_l = φ_l r_{l−1}     l ≥ 2
/// ```
///
/// `r_l` estimates the posterior expectation of the layer-`l` encoding
/// functions. Without the offset `c` every hidden unit is positively
/// homogeneous in `x`, so `r₁` cannot represent bounded expectations that
/// vary along rays; `c` is optional and on by default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecognitionNet {
    pub w: DMatrix<f64>,
    #[serde(default)]
    pub c: Option<DVector<f64>>,
    /// `phi[l - 1]` is `K_l × K_{l−1}` (`K_0 = M`).
    pub phi: Vec<DMatrix<f64>>,
    #[serde(default)]
    averaged: Vec<Option<NormalEquations>>,
}

impl RecognitionNet {
    /// Random `W` (and `c` when `hidden_bias`) with standard-normal entries;
    /// readouts start at zero.
    pub fn new<R: Rng + ?Sized>(
        hidden: usize,
        input_dim: usize,
        ks: &[usize],
        hidden_bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if hidden == 0 || input_dim == 0 || ks.is_empty() || ks.contains(&0) {
            return Err(Error::InvalidArgument(
                "recognition net needs nonzero sizes and at least one layer".into(),
            ));
        }
        let w = DMatrix::from_fn(hidden, input_dim, |_, _| StandardNormal.sample(&mut *rng));
        let c =
            hidden_bias.then(|| DVector::from_fn(hidden, |_, _| StandardNormal.sample(&mut *rng)));
        let mut prev = hidden;
        let phi = ks
            .iter()
            .map(|&k| {
                let m = DMatrix::zeros(k, prev);
                prev = k;
                m
            })
            .collect();
        Ok(Self {
            w,
            c,
            phi,
            averaged: vec![None; ks.len()],
        })
    }

    pub fn num_layers(&self) -> usize {
        self.phi.len()
    }

    pub fn input_dim(&self) -> usize {
        self.w.ncols()
    }

    /// `N × M` rectified hidden features.
    pub fn hidden_rows(&self, xs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_len("recognition input", self.input_dim(), xs.ncols())?;
        let mut h = xs * self.w.transpose();
        if let Some(c) = &self.c {
            for mut row in h.row_iter_mut() {
                row += c.transpose();
            }
        }
        h.apply(|v| *v = v.max(0.0));
        Ok(h)
    }

    /// All layers' outputs for each row of `xs`; element `l − 1` is `N × K_l`.
    pub fn forward_rows(&self, xs: &DMatrix<f64>) -> Result<Vec<DMatrix<f64>>> {
        let mut prev = self.hidden_rows(xs)?;
        let mut out = Vec::with_capacity(self.phi.len());
        for phi in &self.phi {
            let r = &prev * phi.transpose();
            out.push(r.clone());
            prev = r;
        }
        Ok(out)
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<DVector<f64>>> {
        let xs = DMatrix::from_row_slice(1, x.len(), x);
        Ok(self
            .forward_rows(&xs)?
            .into_iter()
            .map(|r| r.row(0).transpose())
            .collect())
    }

    /// Fits `φ₁ … φ_L` bottom-up on a sleep batch; layer `l ≥ 2` uses
    /// features produced by the freshly updated lower readouts. Returns the
    /// RMS training residual per layer.
    pub fn fit(
        &mut self,
        batch: &SleepBatch,
        ridge_per_sample: f64,
        mode: FitMode,
    ) -> Result<Vec<f64>> {
        let xs = batch.x.as_ref().ok_or_else(|| {
            Error::InvalidArgument("recognition fitting needs observed sleep samples".into())
        })?;
        check_len("sleep batch layers", self.num_layers(), batch.t.len())?;
        if self.averaged.len() != self.num_layers() {
            self.averaged = vec![None; self.num_layers()];
        }
        let mut features = self.hidden_rows(xs)?;
        let mut residuals = Vec::with_capacity(self.num_layers());
        for l in 0..self.num_layers() {
            let targets = &batch.t[l];
            check_len("recognition targets", self.phi[l].nrows(), targets.ncols())?;
            let mut problem = RegressionProblem::new(&features, targets, 0.0);
            if let Some(w) = batch.weights.as_deref() {
                problem = problem.weighted(w);
            }
            let fresh = problem.normal_equations()?;
            let eqs = match mode {
                FitMode::Refit => fresh,
                FitMode::Averaged { decay } => match self.averaged[l].take() {
                    Some(mut acc) => {
                        acc.blend(&fresh, decay);
                        acc
                    }
                    None => fresh,
                },
            };
            let weights = eqs.solve(ridge_per_sample * eqs.mass)?;
            if matches!(mode, FitMode::Averaged { .. }) {
                self.averaged[l] = Some(eqs);
            }
            residuals.push(rms_residual(&features, targets, &weights));
            self.phi[l] = weights.transpose();
            features = &features * weights;
        }
        Ok(residuals)
    }
}
