//! Exact posteriors for small models: full enumeration for binary latents and
//! tensor trapezoid quadrature for up to two continuous latent coordinates.
//! These are test oracles; their cost is exponential in the latent size.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::GenerativeModel;
use crate::error::{Error, Result};
use crate::math::log_sum_exp_slice;
use crate::params::GradientSet;

pub const MAX_ENUMERATED_STATES: usize = 1 << 20;
const MAX_QUADRATURE_DIM: usize = 2;
const QUADRATURE_NODES: usize = 401;

/// Normalised exact posterior over the joint latent support for one `x`.
#[derive(Debug, Clone)]
pub struct ExactPosteriorTable {
    pub x: Vec<f64>,
    /// `states[s][l - 1]` is `z_l` in support point `s`.
    pub states: Vec<Vec<Vec<f64>>>,
    pub weights: Vec<f64>,
    pub log_evidence: f64,
}

impl ExactPosteriorTable {
    /// Σ_s w_s f(states[s]).
    pub fn expectation<F>(&self, f: F) -> Vec<f64>
    where
        F: Fn(&[Vec<f64>]) -> Vec<f64>,
    {
        let mut acc: Vec<f64> = Vec::new();
        for (state, &w) in self.states.iter().zip(&self.weights) {
            let v = f(state);
            if acc.is_empty() {
                acc = vec![0.0; v.len()];
            }
            for (a, b) in acc.iter_mut().zip(&v) {
                *a += w * b;
            }
        }
        acc
    }

    /// Posterior mean of `z_l`.
    pub fn layer_mean(&self, l: usize) -> Vec<f64> {
        self.expectation(|s| s[l - 1].clone())
    }
}

fn binary_states(model: &GenerativeModel) -> Result<Vec<Vec<Vec<f64>>>> {
    if !model.all_latents_discrete() {
        return Err(Error::InvalidArgument(
            "enumeration needs binary latent layers".into(),
        ));
    }
    let bits = model.latent_dim_total();
    if bits >= 64 || (1usize << bits) > MAX_ENUMERATED_STATES {
        return Err(Error::SupportTooLarge(format!(
            "2^{bits} joint states exceeds 2^20"
        )));
    }
    let dims: Vec<usize> = (1..=model.num_latent()).map(|l| model.dim(l)).collect();
    Ok((0..1usize << bits)
        .map(|code| {
            let mut offset = 0;
            dims.iter()
                .map(|&d| {
                    let z = (0..d)
                        .map(|i| ((code >> (offset + i)) & 1) as f64)
                        .collect();
                    offset += d;
                    z
                })
                .collect()
        })
        .collect())
}

fn prior_log_prob(model: &GenerativeModel, latents: &[Vec<f64>]) -> Result<f64> {
    let top = model.num_latent();
    let mut lp = model.prior.log_prob(&latents[top - 1])?;
    for l in 1..top {
        lp += model.conditionals[l].log_prob(&latents[l - 1], &latents[l])?;
    }
    Ok(lp)
}

/// Every joint latent state of a binary model with its prior probability p(z).
pub fn enumerate_prior(model: &GenerativeModel) -> Result<(Vec<Vec<Vec<f64>>>, Vec<f64>)> {
    let states = binary_states(model)?;
    let probs = states
        .iter()
        .map(|s| prior_log_prob(model, s).map(f64::exp))
        .collect::<Result<Vec<_>>>()?;
    Ok((states, probs))
}

fn quadrature_grid(model: &GenerativeModel) -> Result<(Vec<Vec<Vec<f64>>>, Vec<f64>)> {
    let total = model.latent_dim_total();
    if total > MAX_QUADRATURE_DIM {
        return Err(Error::SupportTooLarge(format!(
            "{total} continuous latent coordinates; quadrature supports at most {MAX_QUADRATURE_DIM}"
        )));
    }
    // Box from a fixed-seed prior sample: 1.5 × the largest |z| seen, plus one.
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut radius = vec![0.0f64; total];
    for _ in 0..10_000 {
        let s = model.sample(&mut rng)?;
        for (r, z) in radius.iter_mut().zip(s.latents.iter().flatten()) {
            *r = r.max(z.abs());
        }
    }
    let axes: Vec<Vec<f64>> = radius
        .iter()
        .map(|r| {
            let half = 1.5 * r + 1.0;
            let h = 2.0 * half / (QUADRATURE_NODES - 1) as f64;
            (0..QUADRATURE_NODES)
                .map(|i| -half + i as f64 * h)
                .collect()
        })
        .collect();
    let trap = |i: usize, axis: &[f64]| {
        let h = axis[1] - axis[0];
        if i == 0 || i == axis.len() - 1 {
            0.5 * h
        } else {
            h
        }
    };
    let dims: Vec<usize> = (1..=model.num_latent()).map(|l| model.dim(l)).collect();
    let count = QUADRATURE_NODES.pow(total as u32);
    let mut states = Vec::with_capacity(count);
    let mut qw = Vec::with_capacity(count);
    for code in 0..count {
        let mut idx = code;
        let mut flat = Vec::with_capacity(total);
        let mut w = 1.0;
        for axis in &axes {
            let i = idx % QUADRATURE_NODES;
            idx /= QUADRATURE_NODES;
            flat.push(axis[i]);
            w *= trap(i, axis);
        }
        let mut offset = 0;
        let state = dims
            .iter()
            .map(|&d| {
                let z = flat[offset..offset + d].to_vec();
                offset += d;
                z
            })
            .collect();
        states.push(state);
        qw.push(w);
    }
    Ok((states, qw))
}

/// Exact posterior table for `x`.
pub fn exact_posterior_small(model: &GenerativeModel, x: &[f64]) -> Result<ExactPosteriorTable> {
    let (states, base_weights) = if model.all_latents_discrete() {
        let s = binary_states(model)?;
        let n = s.len();
        (s, vec![1.0; n])
    } else if model.all_latents_continuous() {
        quadrature_grid(model)?
    } else {
        return Err(Error::InvalidArgument(
            "mixed discrete/continuous latents are not supported".into(),
        ));
    };
    let log_terms = states
        .iter()
        .zip(&base_weights)
        .map(|(s, w)| model.log_joint(x, s).map(|lj| lj + w.ln()))
        .collect::<Result<Vec<_>>>()?;
    let log_evidence = log_sum_exp_slice(&log_terms);
    if !log_evidence.is_finite() {
        return Err(Error::NonFinite("posterior normaliser".into()));
    }
    let weights = log_terms.iter().map(|t| (t - log_evidence).exp()).collect();
    Ok(ExactPosteriorTable {
        x: x.to_vec(),
        states,
        weights,
        log_evidence,
    })
}

/// log p_θ(x) by enumeration or quadrature.
pub fn exact_log_likelihood(model: &GenerativeModel, x: &[f64]) -> Result<f64> {
    Ok(exact_posterior_small(model, x)?.log_evidence)
}

/// ∇_θ F at q = exact posterior, i.e. ⟨∇_θ log p(x, z)⟩ over the table.
pub fn exact_free_energy_grad(
    model: &GenerativeModel,
    x: &[f64],
    table: &ExactPosteriorTable,
) -> Result<GradientSet> {
    if table.x != x {
        return Err(Error::InvalidArgument(
            "posterior table was built for a different x".into(),
        ));
    }
    if table
        .states
        .first()
        .is_none_or(|s| s.len() != model.num_latent())
    {
        return Err(Error::InvalidArgument(
            "posterior table does not match the model's layers".into(),
        ));
    }
    let mut acc: Option<GradientSet> = None;
    for (state, &w) in table.states.iter().zip(&table.weights) {
        if w == 0.0 {
            continue;
        }
        let g = model.grad_log_joint(x, state)?;
        match acc.as_mut() {
            None => {
                let mut g = g;
                g.scale(w);
                acc = Some(g);
            }
            Some(a) => a.add_scaled(&g, w),
        }
    }
    acc.ok_or_else(|| Error::NonFinite("empty posterior table".into()))
}
