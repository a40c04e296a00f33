//! Exponential-family conditionals and the link functions that map a parent
//! layer to a child's natural parameters.
//!
//! Conventions per family:
//!
//! | family           | S(z)          | natural parameter        | Φ(η)                                  |
//! |------------------|---------------|--------------------------|---------------------------------------|
//! | `BernoulliVec`   | z             | logits                   | Σ softplus(η)                         |
//! | `GaussianDiag`   | (x, x∘x)      | (m/v, −1/(2v))           | Σ −η₁²/(4η₂) − ½log(−2η₂) + ½log 2π   |
//! | `LaplaceZeroLoc` | \|z\|         | −1/λ                     | Σ log(−2/η)                           |
//!
//! All families use a zero log base measure, so `log_pdf = η·S(z) − Φ(η)`.
//! The two-component Gaussian mixture is not an exponential family; it only
//! supports sampling, density and score.

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::math::{self, sigmoid, softplus, SCALE_FLOOR};

/// Symmetric mixture ½N(m, σ²) + ½N(−m, σ²), independently per coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoGaussianMixture {
    pub dim: usize,
    pub m: f64,
    pub sigma: f64,
}

impl TwoGaussianMixture {
    pub fn new(dim: usize, m: f64, sigma: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("mixture dim must be >= 1".into()));
        }
        if !(sigma > 0.0 && sigma.is_finite()) || !m.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "mixture needs finite m and sigma > 0, got m={m}, sigma={sigma}"
            )));
        }
        Ok(Self { dim, m, sigma })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        (0..self.dim)
            .map(|_| {
                let centre = if rng.random::<bool>() {
                    self.m
                } else {
                    -self.m
                };
                let n: f64 = StandardNormal.sample(rng);
                centre + self.sigma * n
            })
            .collect()
    }

    fn component_log_pdfs(&self, z: f64) -> (f64, f64) {
        let s2 = self.sigma * self.sigma;
        let base = -0.5 * math::LN_2PI - self.sigma.ln() + 0.5f64.ln();
        let a = base - (z - self.m).powi(2) / (2.0 * s2);
        let b = base - (z + self.m).powi(2) / (2.0 * s2);
        (a, b)
    }

    pub fn log_pdf(&self, z: &[f64]) -> Result<f64> {
        check_len("mixture log_pdf", self.dim, z.len())?;
        Ok(z.iter()
            .map(|&zi| {
                let (a, b) = self.component_log_pdfs(zi);
                math::log_sum_exp(a, b)
            })
            .sum())
    }

    /// ∇_z log p(z).
    pub fn score(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_len("mixture score", self.dim, z.len())?;
        let s2 = self.sigma * self.sigma;
        Ok(z.iter()
            .map(|&zi| {
                let (a, b) = self.component_log_pdfs(zi);
                let lse = math::log_sum_exp(a, b);
                let wa = (a - lse).exp();
                let wb = (b - lse).exp();
                -(wa * (zi - self.m) + wb * (zi + self.m)) / s2
            })
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Family {
    BernoulliVec { dim: usize },
    GaussianDiag { dim: usize },
    LaplaceZeroLoc { dim: usize },
    FixedMixture(TwoGaussianMixture),
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::BernoulliVec { .. } => "BernoulliVec",
            Family::GaussianDiag { .. } => "GaussianDiag",
            Family::LaplaceZeroLoc { .. } => "LaplaceZeroLoc",
            Family::FixedMixture(_) => "FixedMixtureOfTwoGaussians",
        }
    }

    pub fn dim(&self) -> usize {
        match *self {
            Family::BernoulliVec { dim }
            | Family::GaussianDiag { dim }
            | Family::LaplaceZeroLoc { dim } => dim,
            Family::FixedMixture(mix) => mix.dim,
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, Family::BernoulliVec { .. })
    }

    /// Length of the natural-parameter (and sufficient-statistic) vector.
    pub fn num_natural(&self) -> Result<usize> {
        match *self {
            Family::BernoulliVec { dim } | Family::LaplaceZeroLoc { dim } => Ok(dim),
            Family::GaussianDiag { dim } => Ok(2 * dim),
            Family::FixedMixture(_) => Err(Error::NotExponentialFamily(self.name())),
        }
    }

    pub fn suff_stats(&self, value: &[f64]) -> Result<Vec<f64>> {
        check_len("suff_stats", self.dim(), value.len())?;
        match self {
            Family::BernoulliVec { .. } => Ok(value.to_vec()),
            Family::LaplaceZeroLoc { .. } => Ok(value.iter().map(|z| z.abs()).collect()),
            Family::GaussianDiag { .. } => {
                let mut s = value.to_vec();
                s.extend(value.iter().map(|x| x * x));
                Ok(s)
            }
            Family::FixedMixture(_) => Err(Error::NotExponentialFamily(self.name())),
        }
    }

    /// Rejects natural parameters outside the family's domain.
    pub fn check_natural(&self, eta: &[f64]) -> Result<()> {
        check_len("natural parameter", self.num_natural()?, eta.len())?;
        if let Some(i) = eta.iter().position(|e| !e.is_finite()) {
            return Err(self.domain_error(format!("component {i} is not finite")));
        }
        match *self {
            Family::LaplaceZeroLoc { .. } => {
                if let Some(i) = eta.iter().position(|&e| e >= 0.0) {
                    return Err(self.domain_error(format!("η[{i}] = {} must be < 0", eta[i])));
                }
            }
            Family::GaussianDiag { dim } => {
                if let Some(i) = eta[dim..].iter().position(|&e| e >= 0.0) {
                    return Err(self.domain_error(format!(
                        "precision component η[{}] = {} must be < 0",
                        dim + i,
                        eta[dim + i]
                    )));
                }
            }
            _ => {}
        }
        Ok(())
    }

    fn domain_error(&self, detail: String) -> Error {
        Error::OutsideDomain {
            family: self.name(),
            detail,
        }
    }

    pub fn log_normalizer(&self, eta: &[f64]) -> Result<f64> {
        self.check_natural(eta)?;
        Ok(match *self {
            Family::BernoulliVec { .. } => eta.iter().map(|&e| softplus(e)).sum(),
            Family::LaplaceZeroLoc { .. } => eta.iter().map(|&e| (-2.0 / e).ln()).sum(),
            Family::GaussianDiag { dim } => (0..dim)
                .map(|i| {
                    let (e1, e2) = (eta[i], eta[dim + i]);
                    -e1 * e1 / (4.0 * e2) - 0.5 * (-2.0 * e2).ln() + 0.5 * math::LN_2PI
                })
                .sum(),
            Family::FixedMixture(_) => unreachable!("rejected by check_natural"),
        })
    }

    /// μ = ∇Φ(η) = ⟨S(z)⟩.
    pub fn mean_params(&self, eta: &[f64]) -> Result<Vec<f64>> {
        self.check_natural(eta)?;
        Ok(match *self {
            Family::BernoulliVec { .. } => eta.iter().map(|&e| sigmoid(e)).collect(),
            Family::LaplaceZeroLoc { .. } => eta.iter().map(|&e| -1.0 / e).collect(),
            Family::GaussianDiag { dim } => {
                let mut mu = vec![0.0; 2 * dim];
                for i in 0..dim {
                    let var = -0.5 / eta[dim + i];
                    let mean = eta[i] * var;
                    mu[i] = mean;
                    mu[dim + i] = mean * mean + var;
                }
                mu
            }
            Family::FixedMixture(_) => unreachable!("rejected by check_natural"),
        })
    }

    /// Exact draw from the family with natural parameter `eta`.
    pub fn sample<R: Rng + ?Sized>(&self, eta: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        self.check_natural(eta)?;
        Ok(match *self {
            Family::BernoulliVec { .. } => eta
                .iter()
                .map(|&e| {
                    let u: f64 = rng.random();
                    if u < sigmoid(e) {
                        1.0
                    } else {
                        0.0
                    }
                })
                .collect(),
            Family::LaplaceZeroLoc { .. } => eta
                .iter()
                .map(|&e| {
                    let scale = -1.0 / e;
                    let mag: f64 = Exp1.sample(rng);
                    if rng.random::<bool>() {
                        scale * mag
                    } else {
                        -scale * mag
                    }
                })
                .collect(),
            Family::GaussianDiag { dim } => (0..dim)
                .map(|i| {
                    let var = -0.5 / eta[dim + i];
                    let n: f64 = StandardNormal.sample(rng);
                    eta[i] * var + var.sqrt() * n
                })
                .collect(),
            Family::FixedMixture(_) => unreachable!("rejected by check_natural"),
        })
    }

    pub fn log_pdf(&self, eta: &[f64], value: &[f64]) -> Result<f64> {
        let s = self.suff_stats(value)?;
        let phi = self.log_normalizer(eta)?;
        Ok(math::dot(eta, &s) - phi)
    }

    /// ∇_value log p(value | η) for continuous families.
    pub fn value_score(&self, eta: &[f64], value: &[f64]) -> Result<Vec<f64>> {
        self.check_natural(eta)?;
        check_len("value_score", self.dim(), value.len())?;
        match *self {
            Family::LaplaceZeroLoc { .. } => Ok(value
                .iter()
                .zip(eta)
                .map(|(&z, &e)| e * math::sign0(z))
                .collect()),
            Family::GaussianDiag { dim } => Ok((0..dim)
                .map(|i| eta[i] + 2.0 * eta[dim + i] * value[i])
                .collect()),
            _ => Err(Error::InvalidArgument(format!(
                "{} has no value gradient",
                self.name()
            ))),
        }
    }
}

/// Maps a parent value and a parameter block to a child's natural parameters.
///
/// Parameter layouts (row-major, `d` = child dim, `p` = parent dim):
/// * `Linear { bias }`: θ is `d × (p + bias)`, η = θ [z; 1].
/// * `SoftplusLaplaceScale`: B is `d × p`, η = −1 / max(softplus(Bz), 1e-8).
/// * `GaussianLinearMean`: Λ (`d × p`) followed by log Ψ (`d`);
///   η = (Ψ⁻¹Λz, −½Ψ⁻¹).
///
/// Derivatives of η with respect to θ are exposed through a compact set of
/// "Jacobian features" `J(z)` together with a contraction that is linear in
/// those features: `vᵀ ∂η/∂θ = contract(v, J(z))`. Because the contraction is
/// linear, `⟨vᵀ ∂η/∂θ⟩ = contract(v, ⟨J(z)⟩)` for any `v` that does not depend
/// on `z`; this is what lets the wake phase evaluate gradients from expected
/// Jacobian features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Link {
    Linear { bias: bool },
    SoftplusLaplaceScale,
    GaussianLinearMean,
}

impl Link {
    pub fn child_family_ok(&self, family: &Family) -> bool {
        matches!(
            (self, family),
            (Link::Linear { .. }, Family::BernoulliVec { .. })
                | (Link::SoftplusLaplaceScale, Family::LaplaceZeroLoc { .. })
                | (Link::GaussianLinearMean, Family::GaussianDiag { .. })
        )
    }

    pub fn num_params(&self, child_dim: usize, parent_dim: usize) -> usize {
        match *self {
            Link::Linear { bias } => child_dim * (parent_dim + bias as usize),
            Link::SoftplusLaplaceScale => child_dim * parent_dim,
            Link::GaussianLinearMean => child_dim * parent_dim + child_dim,
        }
    }

    pub fn num_natural(&self, child_dim: usize) -> usize {
        match self {
            Link::GaussianLinearMean => 2 * child_dim,
            _ => child_dim,
        }
    }

    pub fn num_jac_features(&self, child_dim: usize, parent_dim: usize) -> usize {
        match *self {
            Link::Linear { bias } => parent_dim + bias as usize,
            Link::SoftplusLaplaceScale => child_dim * parent_dim,
            Link::GaussianLinearMean => child_dim * parent_dim + 2 * child_dim,
        }
    }

    fn check_shapes(&self, child_dim: usize, parent: &[f64], theta: &[f64]) -> Result<()> {
        check_len(
            "link parameter block",
            self.num_params(child_dim, parent.len()),
            theta.len(),
        )
    }

    pub fn natural_param(
        &self,
        child_dim: usize,
        parent: &[f64],
        theta: &[f64],
    ) -> Result<Vec<f64>> {
        self.check_shapes(child_dim, parent, theta)?;
        let p = parent.len();
        Ok(match *self {
            Link::Linear { bias } => {
                let cols = p + bias as usize;
                (0..child_dim)
                    .map(|i| {
                        let row = &theta[i * cols..(i + 1) * cols];
                        let mut acc = math::dot(&row[..p], parent);
                        if bias {
                            acc += row[p];
                        }
                        acc
                    })
                    .collect()
            }
            Link::SoftplusLaplaceScale => (0..child_dim)
                .map(|i| {
                    let u = math::dot(&theta[i * p..(i + 1) * p], parent);
                    -1.0 / softplus(u).max(SCALE_FLOOR)
                })
                .collect(),
            Link::GaussianLinearMean => {
                let mut eta = vec![0.0; 2 * child_dim];
                for i in 0..child_dim {
                    let inv_var = (-theta[child_dim * p + i]).exp();
                    let mean = math::dot(&theta[i * p..(i + 1) * p], parent);
                    eta[i] = mean * inv_var;
                    eta[child_dim + i] = -0.5 * inv_var;
                }
                eta
            }
        })
    }

    /// Compact Jacobian features `J(z)`; see the type-level docs.
    pub fn jac_features(
        &self,
        child_dim: usize,
        parent: &[f64],
        theta: &[f64],
    ) -> Result<Vec<f64>> {
        self.check_shapes(child_dim, parent, theta)?;
        let p = parent.len();
        Ok(match *self {
            Link::Linear { bias } => {
                let mut j = parent.to_vec();
                if bias {
                    j.push(1.0);
                }
                j
            }
            Link::SoftplusLaplaceScale => {
                let mut j = Vec::with_capacity(child_dim * p);
                for i in 0..child_dim {
                    let u = math::dot(&theta[i * p..(i + 1) * p], parent);
                    let sp = softplus(u);
                    // d(−1/sp)/du = sigmoid(u)/sp²; flat below the floor.
                    let c = if sp > SCALE_FLOOR {
                        sigmoid(u) / (sp * sp)
                    } else {
                        0.0
                    };
                    j.extend(parent.iter().map(|z| c * z));
                }
                j
            }
            Link::GaussianLinearMean => {
                let mut j = Vec::with_capacity(child_dim * p + 2 * child_dim);
                let inv: Vec<f64> = (0..child_dim)
                    .map(|i| (-theta[child_dim * p + i]).exp())
                    .collect();
                for &iv in &inv {
                    j.extend(parent.iter().map(|z| z * iv));
                }
                for (i, &iv) in inv.iter().enumerate() {
                    j.push(-math::dot(&theta[i * p..(i + 1) * p], parent) * iv);
                }
                j.extend(inv.iter().map(|iv| 0.5 * iv));
                j
            }
        })
    }

    /// `vᵀ ∂η/∂θ` as a flattened θ-shaped vector, linear in `jac`.
    pub fn contract(
        &self,
        child_dim: usize,
        parent_dim: usize,
        v: &[f64],
        jac: &[f64],
    ) -> Result<Vec<f64>> {
        check_len("contraction vector", self.num_natural(child_dim), v.len())?;
        check_len(
            "jacobian features",
            self.num_jac_features(child_dim, parent_dim),
            jac.len(),
        )?;
        let p = parent_dim;
        let mut grad = vec![0.0; self.num_params(child_dim, p)];
        match *self {
            Link::Linear { bias } => {
                let cols = p + bias as usize;
                for i in 0..child_dim {
                    for c in 0..cols {
                        grad[i * cols + c] = v[i] * jac[c];
                    }
                }
            }
            Link::SoftplusLaplaceScale => {
                for i in 0..child_dim {
                    for c in 0..p {
                        grad[i * p + c] = v[i] * jac[i * p + c];
                    }
                }
            }
            Link::GaussianLinearMean => {
                let d = child_dim;
                for i in 0..d {
                    for c in 0..p {
                        grad[i * p + c] = v[i] * jac[i * p + c];
                    }
                    grad[d * p + i] = v[i] * jac[d * p + i] + v[d + i] * jac[d * p + d + i];
                }
            }
        }
        Ok(grad)
    }

    /// Dense Jacobian ∂η/∂θ, shape `num_natural × num_params` (row-major rows).
    pub fn grad_g(&self, child_dim: usize, parent: &[f64], theta: &[f64]) -> Result<Vec<Vec<f64>>> {
        let jac = self.jac_features(child_dim, parent, theta)?;
        let n = self.num_natural(child_dim);
        (0..n)
            .map(|k| {
                let mut e = vec![0.0; n];
                e[k] = 1.0;
                self.contract(child_dim, parent.len(), &e, &jac)
            })
            .collect()
    }

    /// ∂η/∂z for the parent value, shape `num_natural × parent_dim`.
    pub fn d_eta_d_parent(
        &self,
        child_dim: usize,
        parent: &[f64],
        theta: &[f64],
    ) -> Result<Vec<Vec<f64>>> {
        self.check_shapes(child_dim, parent, theta)?;
        let p = parent.len();
        Ok(match *self {
            Link::Linear { bias } => {
                let cols = p + bias as usize;
                (0..child_dim)
                    .map(|i| theta[i * cols..i * cols + p].to_vec())
                    .collect()
            }
            Link::SoftplusLaplaceScale => (0..child_dim)
                .map(|i| {
                    let row = &theta[i * p..(i + 1) * p];
                    let u = math::dot(row, parent);
                    let sp = softplus(u);
                    let c = if sp > SCALE_FLOOR {
                        sigmoid(u) / (sp * sp)
                    } else {
                        0.0
                    };
                    row.iter().map(|b| c * b).collect()
                })
                .collect(),
            Link::GaussianLinearMean => {
                let mut rows: Vec<Vec<f64>> = (0..child_dim)
                    .map(|i| {
                        let iv = (-theta[child_dim * p + i]).exp();
                        theta[i * p..(i + 1) * p].iter().map(|l| l * iv).collect()
                    })
                    .collect();
                rows.extend((0..child_dim).map(|_| vec![0.0; p]));
                rows
            }
        })
    }
}
