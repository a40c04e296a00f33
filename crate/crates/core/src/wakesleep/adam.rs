use serde::{Deserialize, Serialize};

use crate::error::{check_len, Result};
use crate::params::GradientSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates per parameter block.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new(block_sizes: &[usize]) -> Self {
        Self {
            m: block_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: block_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }
}

/// One bias-corrected Adam step in the ascent direction. Blocks whose
/// gradient is `None` are left untouched (their moments do not decay).
pub fn adam_step(
    params: &mut [&mut [f64]],
    grads: &GradientSet,
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    check_len("adam blocks", state.m.len(), params.len())?;
    check_len("gradient blocks", params.len(), grads.blocks.len())?;
    state.t += 1;
    let t = state.t as f64;
    let c1 = 1.0 - cfg.beta1.powf(t);
    let c2 = 1.0 - cfg.beta2.powf(t);
    for (b, grad) in grads.blocks.iter().enumerate() {
        let Some(g) = grad else { continue };
        let p = &mut params[b];
        check_len("adam parameter block", state.m[b].len(), p.len())?;
        check_len("adam gradient block", p.len(), g.len())?;
        for i in 0..g.len() {
            let m = &mut state.m[b][i];
            let v = &mut state.v[b][i];
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g[i];
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g[i] * g[i];
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            p[i] += cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}
