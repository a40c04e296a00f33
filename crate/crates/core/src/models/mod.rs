//! Chain-structured deep exponential-family models.
//!
//! Layer `0` is the observation `x`; latent layers are `1..=L` with `L` the
//! top. `conditionals[l]` is `p(z_l | z_{l+1})` and the prior sits on `z_L`.
//! Parameter block `l` belongs to `conditionals[l]` for `l < L` and to the
//! prior for `l = L` (empty when the prior is the fixed mixture).

mod builders;
mod oracle;

pub use builders::{
    build_linear_gaussian, build_sbn, build_synthetic, random_synthetic_params, SyntheticParams,
};
pub use oracle::{
    enumerate_prior, exact_free_energy_grad, exact_log_likelihood, exact_posterior_small,
    ExactPosteriorTable, MAX_ENUMERATED_STATES,
};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::expfam::{Family, Link, TwoGaussianMixture};
use crate::params::GradientSet;

/// `p(child | parent)` with natural parameter `link(parent, theta)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conditional {
    pub family: Family,
    pub link: Link,
    pub parent_dim: usize,
    pub theta: Vec<f64>,
}

impl Conditional {
    pub fn new(family: Family, link: Link, parent_dim: usize, theta: Vec<f64>) -> Result<Self> {
        if !link.child_family_ok(&family) {
            return Err(Error::InvalidArgument(format!(
                "link {link:?} cannot parameterise {}",
                family.name()
            )));
        }
        check_len(
            "conditional parameter block",
            link.num_params(family.dim(), parent_dim),
            theta.len(),
        )?;
        Ok(Self {
            family,
            link,
            parent_dim,
            theta,
        })
    }

    pub fn child_dim(&self) -> usize {
        self.family.dim()
    }

    pub fn num_params(&self) -> usize {
        self.theta.len()
    }

    pub fn num_jac_features(&self) -> usize {
        self.link
            .num_jac_features(self.child_dim(), self.parent_dim)
    }

    pub fn natural_param(&self, parent: &[f64]) -> Result<Vec<f64>> {
        self.link
            .natural_param(self.child_dim(), parent, &self.theta)
    }

    /// μ_{child|parent}.
    pub fn mean_given(&self, parent: &[f64]) -> Result<Vec<f64>> {
        self.family.mean_params(&self.natural_param(parent)?)
    }

    pub fn sample<R: Rng + ?Sized>(&self, parent: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        self.family.sample(&self.natural_param(parent)?, rng)
    }

    pub fn log_prob(&self, child: &[f64], parent: &[f64]) -> Result<f64> {
        self.family.log_pdf(&self.natural_param(parent)?, child)
    }

    pub fn jac_features(&self, parent: &[f64]) -> Result<Vec<f64>> {
        self.link
            .jac_features(self.child_dim(), parent, &self.theta)
    }

    pub fn contract(&self, v: &[f64], jac: &[f64]) -> Result<Vec<f64>> {
        self.link
            .contract(self.child_dim(), self.parent_dim, v, jac)
    }

    /// ∇_θ log p(child | parent) = (S(child) − μ)ᵀ ∂η/∂θ.
    pub fn grad_theta(&self, child: &[f64], parent: &[f64]) -> Result<Vec<f64>> {
        let s = self.family.suff_stats(child)?;
        let mu = self.mean_given(parent)?;
        let diff: Vec<f64> = s.iter().zip(&mu).map(|(a, b)| a - b).collect();
        self.contract(&diff, &self.jac_features(parent)?)
    }

    /// ∇_parent log p(child | parent).
    pub fn parent_score(&self, child: &[f64], parent: &[f64]) -> Result<Vec<f64>> {
        let s = self.family.suff_stats(child)?;
        let mu = self.mean_given(parent)?;
        let deta = self
            .link
            .d_eta_d_parent(self.child_dim(), parent, &self.theta)?;
        let mut out = vec![0.0; parent.len()];
        for (k, row) in deta.iter().enumerate() {
            let w = s[k] - mu[k];
            for (o, r) in out.iter_mut().zip(row) {
                *o += w * r;
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Prior {
    /// `p(z_L) = exp(θᵀS(z_L) − Φ(θ))`.
    Learnable {
        family: Family,
        theta: Vec<f64>,
    },
    Fixed(TwoGaussianMixture),
}

impl Prior {
    pub fn dim(&self) -> usize {
        match self {
            Prior::Learnable { family, .. } => family.dim(),
            Prior::Fixed(m) => m.dim,
        }
    }

    pub fn family(&self) -> Family {
        match self {
            Prior::Learnable { family, .. } => *family,
            Prior::Fixed(m) => Family::FixedMixture(*m),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<f64>> {
        match self {
            Prior::Learnable { family, theta } => family.sample(theta, rng),
            Prior::Fixed(m) => Ok(m.sample(rng)),
        }
    }

    pub fn log_prob(&self, z: &[f64]) -> Result<f64> {
        match self {
            Prior::Learnable { family, theta } => family.log_pdf(theta, z),
            Prior::Fixed(m) => m.log_pdf(z),
        }
    }

    pub fn score(&self, z: &[f64]) -> Result<Vec<f64>> {
        match self {
            Prior::Learnable { family, theta } => family.value_score(theta, z),
            Prior::Fixed(m) => m.score(z),
        }
    }
}

/// One ancestral draw: `latents[l - 1]` holds `z_l`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointSample {
    pub latents: Vec<Vec<f64>>,
    pub x: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerativeModel {
    pub prior: Prior,
    /// `conditionals[l]` is `p(z_l | z_{l+1})`, bottom (observation) first.
    pub conditionals: Vec<Conditional>,
}

impl GenerativeModel {
    pub fn new(prior: Prior, conditionals: Vec<Conditional>) -> Result<Self> {
        if conditionals.is_empty() {
            return Err(Error::InvalidArgument(
                "a model needs at least one latent layer".into(),
            ));
        }
        for l in 0..conditionals.len() {
            let parent_dim = if l + 1 < conditionals.len() {
                conditionals[l + 1].child_dim()
            } else {
                prior.dim()
            };
            check_len("layer chaining", parent_dim, conditionals[l].parent_dim)?;
        }
        if let Prior::Learnable { family, theta } = &prior {
            check_len("prior parameter", family.num_natural()?, theta.len())?;
        }
        Ok(Self {
            prior,
            conditionals,
        })
    }

    /// Number of latent layers `L`.
    pub fn num_latent(&self) -> usize {
        self.conditionals.len()
    }

    /// Dimension of layer `l` (0 = observation).
    pub fn dim(&self, l: usize) -> usize {
        let top = self.num_latent();
        if l == top {
            self.prior.dim()
        } else {
            self.conditionals[l].child_dim()
        }
    }

    pub fn family(&self, l: usize) -> Family {
        if l == self.num_latent() {
            self.prior.family()
        } else {
            self.conditionals[l].family
        }
    }

    pub fn has_learnable_prior(&self) -> bool {
        matches!(self.prior, Prior::Learnable { .. })
    }

    /// Parameter block `l` (`l = L` is the prior; empty for a fixed prior).
    pub fn block(&self, l: usize) -> &[f64] {
        if l == self.num_latent() {
            match &self.prior {
                Prior::Learnable { theta, .. } => theta,
                Prior::Fixed(_) => &[],
            }
        } else {
            &self.conditionals[l].theta
        }
    }

    pub fn block_mut(&mut self, l: usize) -> &mut [f64] {
        let top = self.num_latent();
        if l == top {
            match &mut self.prior {
                Prior::Learnable { theta, .. } => theta,
                Prior::Fixed(_) => &mut [],
            }
        } else {
            &mut self.conditionals[l].theta
        }
    }

    pub fn num_blocks(&self) -> usize {
        self.num_latent() + 1
    }

    pub fn block_learnable(&self, l: usize) -> bool {
        !self.block(l).is_empty()
    }

    pub fn all_params_finite(&self) -> bool {
        (0..self.num_blocks()).all(|l| self.block(l).iter().all(|v| v.is_finite()))
    }

    /// Total number of latent coordinates.
    pub fn latent_dim_total(&self) -> usize {
        (1..=self.num_latent()).map(|l| self.dim(l)).sum()
    }

    pub fn all_latents_discrete(&self) -> bool {
        (1..=self.num_latent()).all(|l| self.family(l).is_discrete())
    }

    pub fn all_latents_continuous(&self) -> bool {
        (1..=self.num_latent()).all(|l| !self.family(l).is_discrete())
    }

    fn parent<'a>(&self, latents: &'a [Vec<f64>], l: usize) -> &'a [f64] {
        &latents[l]
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<JointSample> {
        let top = self.num_latent();
        let mut latents = vec![Vec::new(); top];
        latents[top - 1] = self.prior.sample(rng)?;
        for l in (1..top).rev() {
            latents[l - 1] = self.conditionals[l].sample(&latents[l], rng)?;
        }
        let x = self.conditionals[0].sample(&latents[0], rng)?;
        Ok(JointSample { latents, x })
    }

    pub fn sample_x<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<Vec<f64>>> {
        (0..n).map(|_| self.sample(rng).map(|s| s.x)).collect()
    }

    pub fn log_joint(&self, x: &[f64], latents: &[Vec<f64>]) -> Result<f64> {
        let top = self.num_latent();
        check_len("latent layers", top, latents.len())?;
        let mut lp = self.prior.log_prob(&latents[top - 1])?;
        lp += self.conditionals[0].log_prob(x, self.parent(latents, 0))?;
        for l in 1..top {
            lp += self.conditionals[l].log_prob(&latents[l - 1], self.parent(latents, l))?;
        }
        Ok(lp)
    }

    /// ∇_θ log p(x, z) for every learnable block.
    pub fn grad_log_joint(&self, x: &[f64], latents: &[Vec<f64>]) -> Result<GradientSet> {
        let top = self.num_latent();
        check_len("latent layers", top, latents.len())?;
        let mut blocks = Vec::with_capacity(top + 1);
        blocks.push(Some(self.conditionals[0].grad_theta(x, &latents[0])?));
        for l in 1..top {
            blocks.push(Some(
                self.conditionals[l].grad_theta(&latents[l - 1], &latents[l])?,
            ));
        }
        blocks.push(match &self.prior {
            Prior::Learnable { family, theta } => {
                let s = family.suff_stats(&latents[top - 1])?;
                let mu = family.mean_params(theta)?;
                Some(s.iter().zip(&mu).map(|(a, b)| a - b).collect())
            }
            Prior::Fixed(_) => None,
        });
        Ok(GradientSet { blocks })
    }

    /// log p(x, z) and its gradient with respect to continuous latents.
    pub fn log_joint_latent_grad(
        &self,
        x: &[f64],
        latents: &[Vec<f64>],
    ) -> Result<(f64, Vec<Vec<f64>>)> {
        if !self.all_latents_continuous() {
            return Err(Error::InvalidArgument(
                "latent gradients need continuous latent layers".into(),
            ));
        }
        let top = self.num_latent();
        let lp = self.log_joint(x, latents)?;
        let mut grad: Vec<Vec<f64>> = latents.iter().map(|z| vec![0.0; z.len()]).collect();
        add_into(&mut grad[top - 1], &self.prior.score(&latents[top - 1])?);
        add_into(
            &mut grad[0],
            &self.conditionals[0].parent_score(x, &latents[0])?,
        );
        for l in 1..top {
            let cond = &self.conditionals[l];
            let eta = cond.natural_param(&latents[l])?;
            add_into(
                &mut grad[l - 1],
                &cond.family.value_score(&eta, &latents[l - 1])?,
            );
            add_into(
                &mut grad[l],
                &cond.parent_score(&latents[l - 1], &latents[l])?,
            );
        }
        Ok((lp, grad))
    }
}

fn add_into(acc: &mut [f64], v: &[f64]) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += b;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn chaining_is_validated() {
        let c0 = Conditional::new(
            Family::BernoulliVec { dim: 2 },
            Link::Linear { bias: true },
            3,
            vec![0.0; 8],
        )
        .unwrap();
        let prior = Prior::Learnable {
            family: Family::BernoulliVec { dim: 2 },
            theta: vec![0.0; 2],
        };
        assert!(GenerativeModel::new(prior, vec![c0]).is_err());
    }

    #[test]
    fn link_family_pairing_is_checked() {
        assert!(Conditional::new(
            Family::GaussianDiag { dim: 1 },
            Link::Linear { bias: false },
            1,
            vec![0.0],
        )
        .is_err());
    }

    #[test]
    fn latent_gradient_matches_finite_difference() {
        let truth = random_synthetic_params(2, 2, 1, &mut ChaCha8Rng::seed_from_u64(5));
        let model = build_synthetic(&truth).unwrap();
        let x = vec![0.4, -1.3];
        let latents = vec![vec![0.7, -0.2], vec![2.6]];
        let (_, g) = model.log_joint_latent_grad(&x, &latents).unwrap();
        for l in 0..2 {
            for k in 0..latents[l].len() {
                let h = 1e-6;
                let mut p = latents.clone();
                p[l][k] += h;
                let mut m = latents.clone();
                m[l][k] -= h;
                let fd = (model.log_joint(&x, &p).unwrap() - model.log_joint(&x, &m).unwrap())
                    / (2.0 * h);
                assert!(
                    (fd - g[l][k]).abs() < 1e-5 * (1.0 + fd.abs()),
                    "layer {l} coord {k}: fd {fd} vs {}",
                    g[l][k]
                );
            }
        }
    }
}
