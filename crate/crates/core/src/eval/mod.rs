//! Sample-based evaluation: kernel MMD, the relative three-sample test and
//! a Hamiltonian Monte Carlo sampler for posterior comparisons.

mod hmc;
mod mmd;

pub use hmc::{hmc_sample, leapfrog, HmcConfig, HmcOutput, LogDensity, PosteriorTarget};
pub use mmd::{
    median_heuristic, mmd2_unbiased, relative_mmd_permutation_test, relative_mmd_test, KernelSpec,
    MmdReport, TestMethod, MEDIAN_SUBSAMPLE, MEDIAN_SUBSAMPLE_SEED,
};
