//! Sleep-phase readouts that turn DDC expectations into wake gradients.
//!
//! With `T_l = T(z_l)` and block `l` holding θ_l of `p(z_l | z_{l+1})`:
//!
//! | readout | features | target                                        |
//! |---------|----------|-----------------------------------------------|
//! | α₀      | T₁       | Jacobian features J₀(z₁) of η₀ w.r.t. θ₀      |
//! | α_l     | T_l      | S_l(z_l)ᵀ ∂η_l/∂θ_l evaluated at z_{l+1}       |
//! | α_L     | T_L      | S_L(z_L) (learnable prior only)               |
//! | β_l     | T_l      | μ_{l−1}(z_l)ᵀ ∂η_{l−1}/∂θ_{l−1} at z_l          |
//!
//! All readouts that share a feature layer are solved with one factorization.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::ridge::{rms_residual, NormalEquations, RegressionProblem};
use super::FitMode;
use crate::error::{check_len, Error, Result};
use crate::models::GenerativeModel;
use crate::wakesleep::SleepBatch;

/// Source of the conditional means in the β targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaMode {
    /// μ_{z_{l−1}|z_l} from the family's mean parameters.
    #[default]
    Analytic,
    /// The sampled child statistic S_{l−1}(z_{l−1}) from the sleep batch.
    Sampled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApproxOptions {
    pub ridge_per_sample: f64,
    pub beta_mode: BetaMode,
    pub fit_mode: FitMode,
    /// `frozen[l]` skips every readout that only serves block `l`.
    pub frozen: Vec<bool>,
}

/// Readouts stored as `K × P` matrices: prediction = `Wᵀ T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionApprox {
    /// Indexed by parameter block `0..=L`.
    pub alpha: Vec<Option<DMatrix<f64>>>,
    /// Indexed by feature layer; `beta[l]` serves block `l − 1`; `beta[0]` is unused.
    pub beta: Vec<Option<DMatrix<f64>>>,
    /// Model version these readouts were fitted against.
    pub fitted_version: u64,
    /// RMS training residual per feature layer (`residuals[l - 1]`).
    pub residuals: Vec<f64>,
    #[serde(default)]
    averaged: Vec<Option<NormalEquations>>,
}

impl FunctionApprox {
    pub fn active_blocks(&self) -> Vec<bool> {
        (0..self.alpha.len())
            .map(|l| self.alpha[l].is_some())
            .collect()
    }
}

enum Slot {
    Alpha(usize),
    Beta(usize),
}

fn row_vec(m: &DMatrix<f64>, s: usize) -> Vec<f64> {
    m.row(s).iter().copied().collect()
}

fn layer_row(batch: &SleepBatch, l: usize, s: usize) -> Result<Vec<f64>> {
    if l == 0 {
        batch
            .x
            .as_ref()
            .map(|x| row_vec(x, s))
            .ok_or_else(|| Error::InvalidArgument("sampled β₁ needs observed sleep samples".into()))
    } else {
        Ok(row_vec(&batch.z[l - 1], s))
    }
}

fn block_active(model: &GenerativeModel, frozen: &[bool], l: usize) -> bool {
    model.block_learnable(l) && !frozen.get(l).copied().unwrap_or(false)
}

/// Fits α and β readouts on a sleep batch drawn from the current model.
/// `previous` supplies the running normal equations when averaging.
pub fn fit_function_approx(
    model: &GenerativeModel,
    batch: &SleepBatch,
    opts: &ApproxOptions,
    model_version: u64,
    previous: Option<&FunctionApprox>,
) -> Result<FunctionApprox> {
    let top = model.num_latent();
    check_len("sleep batch layers", top, batch.z.len())?;
    check_len("sleep batch encodings", top, batch.t.len())?;
    let n = batch.len();
    let mut alpha = vec![None; top + 1];
    let mut beta = vec![None; top + 1];
    let mut residuals = vec![0.0; top];
    let mut averaged = previous
        .map(|p| p.averaged.clone())
        .filter(|a| a.len() == top)
        .unwrap_or_else(|| vec![None; top]);

    for f in 1..=top {
        let mut slots: Vec<(Slot, usize, usize)> = Vec::new();
        let mut columns: Vec<Vec<f64>> = vec![Vec::new(); n];
        let mut width = 0;
        let mut push = |slot: Slot, rows: Vec<Vec<f64>>, slots: &mut Vec<(Slot, usize, usize)>| {
            let p = rows.first().map_or(0, |r| r.len());
            for (c, r) in columns.iter_mut().zip(rows) {
                c.extend(r);
            }
            slots.push((slot, width, p));
            width += p;
        };

        // α readouts whose features are T_f: α₀ and α₁ share T₁.
        let alpha_blocks: &[usize] = if f == 1 { &[0, 1] } else { &[f] };
        for &l in alpha_blocks {
            if !block_active(model, &opts.frozen, l) {
                continue;
            }
            let rows = (0..n)
                .map(|s| alpha_target(model, batch, l, s))
                .collect::<Result<Vec<_>>>()?;
            push(Slot::Alpha(l), rows, &mut slots);
        }
        if block_active(model, &opts.frozen, f - 1) {
            let rows = (0..n)
                .map(|s| beta_target(model, batch, f, s, opts.beta_mode))
                .collect::<Result<Vec<_>>>()?;
            push(Slot::Beta(f), rows, &mut slots);
        }
        if slots.is_empty() {
            continue;
        }

        let features = &batch.t[f - 1];
        let flat: Vec<f64> = columns.into_iter().flatten().collect();
        let targets = DMatrix::from_row_slice(n, width, &flat);
        let mut problem = RegressionProblem::new(features, &targets, 0.0);
        if let Some(w) = batch.weights.as_deref() {
            problem = problem.weighted(w);
        }
        let fresh = problem.normal_equations()?;
        let eqs = match (opts.fit_mode, averaged[f - 1].take()) {
            (FitMode::Averaged { decay }, Some(mut acc))
                if acc.cross.ncols() == fresh.cross.ncols() =>
            {
                acc.blend(&fresh, decay);
                acc
            }
            _ => fresh,
        };
        let weights = eqs.solve(opts.ridge_per_sample * eqs.mass)?;
        if matches!(opts.fit_mode, FitMode::Averaged { .. }) {
            averaged[f - 1] = Some(eqs);
        }
        residuals[f - 1] = rms_residual(features, &targets, &weights);
        for (slot, start, p) in slots {
            let w = weights.columns(start, p).into_owned();
            match slot {
                Slot::Alpha(l) => alpha[l] = Some(w),
                Slot::Beta(l) => beta[l] = Some(w),
            }
        }
    }

    Ok(FunctionApprox {
        alpha,
        beta,
        fitted_version: model_version,
        residuals,
        averaged,
    })
}

/// Regression target of α for block `l` at sleep sample `s`.
fn alpha_target(
    model: &GenerativeModel,
    batch: &SleepBatch,
    l: usize,
    s: usize,
) -> Result<Vec<f64>> {
    let top = model.num_latent();
    if l == 0 {
        model.conditionals[0].jac_features(&row_vec(&batch.z[0], s))
    } else if l < top {
        let cond = &model.conditionals[l];
        let child = row_vec(&batch.z[l - 1], s);
        let parent = row_vec(&batch.z[l], s);
        let stats = cond.family.suff_stats(&child)?;
        cond.contract(&stats, &cond.jac_features(&parent)?)
    } else {
        model.family(top).suff_stats(&row_vec(&batch.z[top - 1], s))
    }
}

/// Regression target of β_f (serving block `f − 1`) at sleep sample `s`.
fn beta_target(
    model: &GenerativeModel,
    batch: &SleepBatch,
    f: usize,
    s: usize,
    mode: BetaMode,
) -> Result<Vec<f64>> {
    let cond = &model.conditionals[f - 1];
    let parent = row_vec(&batch.z[f - 1], s);
    let v = match mode {
        BetaMode::Analytic => cond.mean_given(&parent)?,
        BetaMode::Sampled => cond.family.suff_stats(&layer_row(batch, f - 1, s)?)?,
    };
    cond.contract(&v, &cond.jac_features(&parent)?)
}
