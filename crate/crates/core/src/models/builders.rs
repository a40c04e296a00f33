use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use super::{Conditional, GenerativeModel, Prior};
use crate::error::{check_len, Error, Result};
use crate::expfam::{Family, Link, TwoGaussianMixture};

/// Parameters of the sparse three-layer hierarchy
///
/// ```text
/// z2 ~ ½ N(m, σ²) + ½ N(−m, σ²)
/// z1 | z2 ~ Laplace(0, softplus(B z2))
/// x | z1 ~ N(Λ z1, diag Ψ)
/// ```
///
/// `b` is `d1 × d2` and `lambda` is `dx × d1`, both row-major; `psi` holds
/// the observation variances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticParams {
    pub dx: usize,
    pub d1: usize,
    pub d2: usize,
    pub b: Vec<f64>,
    pub lambda: Vec<f64>,
    pub psi: Vec<f64>,
    pub m: f64,
    pub sigma: f64,
}

/// Draws ground-truth parameters: B and Λ entries i.i.d. N(0, 1), Ψ entries
/// i.i.d. Uniform(0.05, 0.2), mixture m = 3 and σ = 0.1.
pub fn random_synthetic_params<R: Rng + ?Sized>(
    dx: usize,
    d1: usize,
    d2: usize,
    rng: &mut R,
) -> SyntheticParams {
    let mut normal =
        |n: usize| -> Vec<f64> { (0..n).map(|_| StandardNormal.sample(&mut *rng)).collect() };
    let b = normal(d1 * d2);
    let lambda = normal(dx * d1);
    let unif = Uniform::new(0.05, 0.2).expect("valid range");
    let psi = (0..dx).map(|_| unif.sample(&mut *rng)).collect();
    SyntheticParams {
        dx,
        d1,
        d2,
        b,
        lambda,
        psi,
        m: 3.0,
        sigma: 0.1,
    }
}

pub fn build_synthetic(p: &SyntheticParams) -> Result<GenerativeModel> {
    if p.dx == 0 || p.d1 == 0 || p.d2 == 0 {
        return Err(Error::InvalidArgument("layer dims must be >= 1".into()));
    }
    check_len("B", p.d1 * p.d2, p.b.len())?;
    check_len("Lambda", p.dx * p.d1, p.lambda.len())?;
    check_len("Psi", p.dx, p.psi.len())?;
    if let Some(v) = p.psi.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidArgument(format!(
            "Psi entries must be positive, got {v}"
        )));
    }
    let prior = Prior::Fixed(TwoGaussianMixture::new(p.d2, p.m, p.sigma)?);
    let middle = Conditional::new(
        Family::LaplaceZeroLoc { dim: p.d1 },
        Link::SoftplusLaplaceScale,
        p.d2,
        p.b.clone(),
    )?;
    let mut theta0 = p.lambda.clone();
    theta0.extend(p.psi.iter().map(|v| v.ln()));
    let bottom = Conditional::new(
        Family::GaussianDiag { dim: p.dx },
        Link::GaussianLinearMean,
        p.d1,
        theta0,
    )?;
    GenerativeModel::new(prior, vec![bottom, middle])
}

/// Sigmoid belief network with every parameter zero.
///
/// `latent_dims` lists the latent layers bottom-up (`z_1` first). Every link
/// carries a bias column and the top layer has learnable logits.
pub fn build_sbn(latent_dims: &[usize], observed_dim: usize) -> Result<GenerativeModel> {
    if latent_dims.is_empty() || latent_dims.contains(&0) || observed_dim == 0 {
        return Err(Error::InvalidArgument(
            "sbn needs at least one latent layer and nonzero dims".into(),
        ));
    }
    let mut dims = vec![observed_dim];
    dims.extend_from_slice(latent_dims);
    let link = Link::Linear { bias: true };
    let conditionals = (0..latent_dims.len())
        .map(|l| {
            let (d, p) = (dims[l], dims[l + 1]);
            Conditional::new(
                Family::BernoulliVec { dim: d },
                link,
                p,
                vec![0.0; link.num_params(d, p)],
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let top = *latent_dims.last().unwrap();
    let prior = Prior::Learnable {
        family: Family::BernoulliVec { dim: top },
        theta: vec![0.0; top],
    };
    GenerativeModel::new(prior, conditionals)
}

/// `z ~ N(0, I)`, `x | z ~ N(Λz, diag Ψ)`; the prior block holds the
/// standard-normal natural parameters and is usually frozen.
pub fn build_linear_gaussian(
    dx: usize,
    dz: usize,
    lambda: &[f64],
    psi: &[f64],
) -> Result<GenerativeModel> {
    check_len("Lambda", dx * dz, lambda.len())?;
    check_len("Psi", dx, psi.len())?;
    let mut theta0 = lambda.to_vec();
    theta0.extend(psi.iter().map(|v| v.ln()));
    let bottom = Conditional::new(
        Family::GaussianDiag { dim: dx },
        Link::GaussianLinearMean,
        dz,
        theta0,
    )?;
    let mut prior_theta = vec![0.0; dz];
    prior_theta.extend(std::iter::repeat_n(-0.5, dz));
    let prior = Prior::Learnable {
        family: Family::GaussianDiag { dim: dz },
        theta: prior_theta,
    };
    GenerativeModel::new(prior, vec![bottom])
}
