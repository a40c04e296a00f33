//! Distributed distributional codes: random encoding functions, the
//! recognition network that predicts their posterior expectations, and the
//! ridge-regression readouts fitted on sleep samples.

mod approx;
mod encoder;
mod recognition;
mod ridge;

pub use approx::{fit_function_approx, ApproxOptions, BetaMode, FunctionApprox};
pub use encoder::{make_basis, DdcBasis, Encoder};
pub use recognition::RecognitionNet;
pub use ridge::{rms_residual, solve_ridge, NormalEquations, RegressionProblem};

use serde::{Deserialize, Serialize};

/// How readouts are refitted each sleep phase.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FitMode {
    /// Solve from scratch on the fresh batch.
    #[default]
    Refit,
    /// Exponentially average the normal equations across sleep phases.
    Averaged { decay: f64 },
}

fn default_hidden() -> usize {
    100
}
fn default_true() -> bool {
    true
}

/// Sizes of the DDC machinery: hidden width `M` of the recognition network
/// and the encoding-function count `K_l` per latent layer (bottom-up).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DdcConfig {
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    pub k: Vec<usize>,
    /// Fixed random offset inside the hidden rectifier.
    #[serde(default = "default_true")]
    pub hidden_bias: bool,
}

impl DdcConfig {
    pub fn new(hidden: usize, k: Vec<usize>) -> Self {
        Self {
            hidden,
            k,
            hidden_bias: true,
        }
    }
}
