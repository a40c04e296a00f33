use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::GenerativeModel;

/// Unnormalised log density with gradient.
pub trait LogDensity {
    fn dim(&self) -> usize;
    fn log_density_and_grad(&self, z: &[f64]) -> Result<(f64, Vec<f64>)>;
}

/// Unnormalised posterior `log p(x, z)` over all latent layers of a model
/// with continuous latents, flattened bottom-up (`z_1` first).
pub struct PosteriorTarget<'a> {
    pub model: &'a GenerativeModel,
    pub x: &'a [f64],
}

impl PosteriorTarget<'_> {
    pub fn split(&self, z: &[f64]) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(self.model.num_latent());
        let mut start = 0;
        for l in 1..=self.model.num_latent() {
            let d = self.model.dim(l);
            out.push(z[start..start + d].to_vec());
            start += d;
        }
        out
    }
}

impl LogDensity for PosteriorTarget<'_> {
    fn dim(&self) -> usize {
        self.model.latent_dim_total()
    }

    fn log_density_and_grad(&self, z: &[f64]) -> Result<(f64, Vec<f64>)> {
        crate::error::check_len("latent vector", self.dim(), z.len())?;
        let (lp, g) = self.model.log_joint_latent_grad(self.x, &self.split(z))?;
        Ok((lp, g.concat()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HmcConfig {
    pub step_size: f64,
    pub leapfrog_steps: usize,
    pub n_samples: usize,
    pub burn_in: usize,
    pub seed: u64,
}

impl Default for HmcConfig {
    fn default() -> Self {
        Self {
            step_size: 0.05,
            leapfrog_steps: 20,
            n_samples: 5000,
            burn_in: 1000,
            seed: 0,
        }
    }
}

impl HmcConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::Config {
                key: "hmc.step_size".into(),
                msg: "must be > 0".into(),
            });
        }
        if self.leapfrog_steps == 0 {
            return Err(Error::Config {
                key: "hmc.leapfrog_steps".into(),
                msg: "must be >= 1".into(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HmcOutput {
    /// `n_samples × dim`, post burn-in.
    pub samples: DMatrix<f64>,
    pub acceptance_rate: f64,
    /// Proposals rejected because the energy was not finite.
    pub nonfinite_proposals: usize,
}

/// `steps` leapfrog steps of size `eps` with unit mass. Returns the final
/// position, momentum, log density and gradient.
pub fn leapfrog<T: LogDensity + ?Sized>(
    target: &T,
    q: &[f64],
    p: &[f64],
    grad: &[f64],
    eps: f64,
    steps: usize,
) -> Result<(Vec<f64>, Vec<f64>, f64, Vec<f64>)> {
    let mut q = q.to_vec();
    let mut p = p.to_vec();
    let mut g = grad.to_vec();
    let mut logp = f64::NAN;
    for _ in 0..steps {
        for (pi, gi) in p.iter_mut().zip(&g) {
            *pi += 0.5 * eps * gi;
        }
        for (qi, pi) in q.iter_mut().zip(&p) {
            *qi += eps * pi;
        }
        let (lp, ng) = target.log_density_and_grad(&q)?;
        logp = lp;
        g = ng;
        for (pi, gi) in p.iter_mut().zip(&g) {
            *pi += 0.5 * eps * gi;
        }
    }
    if steps == 0 {
        logp = target.log_density_and_grad(&q)?.0;
    }
    Ok((q, p, logp, g))
}

/// Consecutive non-finite proposals after which sampling aborts.
const MAX_NONFINITE_RUN: usize = 100;

/// Hamiltonian Monte Carlo with a Metropolis correction on the total energy.
pub fn hmc_sample<T: LogDensity + ?Sized, R: Rng + ?Sized>(
    target: &T,
    init: &[f64],
    config: &HmcConfig,
    rng: &mut R,
) -> Result<HmcOutput> {
    config.validate()?;
    let dim = target.dim();
    crate::error::check_len("HMC initial point", dim, init.len())?;
    let (mut logp, mut grad) = target.log_density_and_grad(init)?;
    if !logp.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite(
            "HMC log density or gradient at init".into(),
        ));
    }
    let mut q = init.to_vec();
    let mut samples = DMatrix::zeros(config.n_samples, dim);
    let mut accepted = 0usize;
    let mut nonfinite = 0usize;
    let mut run = 0usize;
    let total = config.burn_in + config.n_samples;
    for it in 0..total {
        let p0: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut *rng)).collect();
        let kinetic0: f64 = 0.5 * p0.iter().map(|v| v * v).sum::<f64>();
        let (q1, p1, logp1, grad1) = leapfrog(
            target,
            &q,
            &p0,
            &grad,
            config.step_size,
            config.leapfrog_steps,
        )?;
        let kinetic1: f64 = 0.5 * p1.iter().map(|v| v * v).sum::<f64>();
        let log_ratio = (logp1 - kinetic1) - (logp - kinetic0);
        if !log_ratio.is_finite() {
            nonfinite += 1;
            run += 1;
            if run >= MAX_NONFINITE_RUN {
                return Err(Error::NonFinite(format!(
                    "HMC energy at iteration {it} ({run} consecutive non-finite proposals, \
                     step size {})",
                    config.step_size
                )));
            }
        } else {
            run = 0;
            let u: f64 = rng.random();
            if u.ln() < log_ratio {
                q = q1;
                logp = logp1;
                grad = grad1;
                if it >= config.burn_in {
                    accepted += 1;
                }
            }
        }
        if it >= config.burn_in {
            samples.row_mut(it - config.burn_in).copy_from_slice(&q);
        }
    }
    Ok(HmcOutput {
        samples,
        acceptance_rate: accepted as f64 / config.n_samples.max(1) as f64,
        nonfinite_proposals: nonfinite,
    })
}
