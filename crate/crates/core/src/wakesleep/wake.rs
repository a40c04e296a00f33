use nalgebra::DMatrix;

use crate::ddc::{FunctionApprox, RecognitionNet};
use crate::error::{check_len, Error, Result};
use crate::models::GenerativeModel;
use crate::params::GradientSet;

/// Free-energy gradient for a minibatch (rows of `xs`) using recognition
/// outputs and the readouts of the latest sleep phase.
pub fn wake_gradients(
    model: &GenerativeModel,
    net: &RecognitionNet,
    approx: &FunctionApprox,
    xs: &DMatrix<f64>,
    version: u64,
) -> Result<GradientSet> {
    let r = net.forward_rows(xs)?;
    wake_gradients_from_expectations(model, approx, xs, &r, version)
}

/// Same as [`wake_gradients`] with caller-supplied DDC expectations
/// (`r[l - 1]` is `N × K_l`), e.g. exact posterior expectations.
///
/// ```text
/// Δθ₀ = ⟨ contract(S₀(x), α₀ᵀ r₁) − β₁ᵀ r₁ ⟩
/// Δθ_l = ⟨ α_lᵀ r_l − β_{l+1}ᵀ r_{l+1} ⟩
/// Δθ_L = ⟨ α_Lᵀ r_L ⟩ − ∇Φ(θ_L)
/// ```
///
/// The entropy of q does not depend on θ and contributes nothing.
pub fn wake_gradients_from_expectations(
    model: &GenerativeModel,
    approx: &FunctionApprox,
    xs: &DMatrix<f64>,
    r: &[DMatrix<f64>],
    version: u64,
) -> Result<GradientSet> {
    if approx.fitted_version != version {
        return Err(Error::StaleApprox {
            fitted: approx.fitted_version,
            current: version,
        });
    }
    let top = model.num_latent();
    check_len("recognition layers", top, r.len())?;
    let n = xs.nrows();
    if n == 0 {
        return Err(Error::InvalidArgument("empty wake minibatch".into()));
    }
    for rl in r {
        check_len("recognition rows", n, rl.nrows())?;
    }
    let mean_r: Vec<_> = r.iter().map(|m| m.row_mean()).collect();
    let readout =
        |w: &DMatrix<f64>, l: usize| -> Vec<f64> { (&mean_r[l - 1] * w).iter().copied().collect() };

    let mut blocks: Vec<Option<Vec<f64>>> = vec![None; top + 1];
    for (l, slot) in blocks.iter_mut().enumerate() {
        let Some(alpha) = approx.alpha[l].as_ref() else {
            continue;
        };
        let grad = if l == 0 {
            let cond = &model.conditionals[0];
            let beta = approx.beta[1]
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("missing β₁".into()))?;
            let jac = &r[0] * alpha;
            let mut g = vec![0.0; cond.num_params()];
            for s in 0..n {
                let x: Vec<f64> = xs.row(s).iter().copied().collect();
                let stats = cond.family.suff_stats(&x)?;
                let j: Vec<f64> = jac.row(s).iter().copied().collect();
                for (acc, v) in g.iter_mut().zip(cond.contract(&stats, &j)?) {
                    *acc += v;
                }
            }
            let b = readout(beta, 1);
            g.iter().zip(&b).map(|(a, b)| a / n as f64 - b).collect()
        } else if l < top {
            let beta = approx.beta[l + 1]
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument(format!("missing β_{}", l + 1)))?;
            let a = readout(alpha, l);
            let b = readout(beta, l + 1);
            a.iter().zip(&b).map(|(a, b)| a - b).collect()
        } else {
            let family = model.family(top);
            let mu = family.mean_params(model.block(top))?;
            let a = readout(alpha, top);
            a.iter().zip(&mu).map(|(a, m)| a - m).collect()
        };
        *slot = Some(grad);
    }
    let set = GradientSet { blocks };
    if !set.is_finite() {
        return Err(Error::NonFinite(format!(
            "wake gradient (block norms {:?})",
            set.block_norms()
        )));
    }
    Ok(set)
}
