#![allow(dead_code)]

use ddchm::models::{build_sbn, GenerativeModel};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// SBN with every weight, bias and prior logit drawn from N(0, 1).
pub fn random_sbn<R: Rng + ?Sized>(
    latent: &[usize],
    observed: usize,
    rng: &mut R,
) -> GenerativeModel {
    let mut model = build_sbn(latent, observed).unwrap();
    for l in 0..model.num_blocks() {
        for v in model.block_mut(l) {
            *v = StandardNormal.sample(&mut *rng);
        }
    }
    model
}

pub fn random_binary<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    (0..d)
        .map(|_| if rng.random::<bool>() { 1.0 } else { 0.0 })
        .collect()
}
