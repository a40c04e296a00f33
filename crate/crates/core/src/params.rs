use serde::{Deserialize, Serialize};

/// One flattened gradient per parameter block; `None` for blocks that are
/// fixed (frozen layers or the non-learnable mixture prior).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientSet {
    pub blocks: Vec<Option<Vec<f64>>>,
}

impl GradientSet {
    pub fn zeros_like(blocks: &[Option<usize>]) -> Self {
        Self {
            blocks: blocks.iter().map(|b| b.map(|n| vec![0.0; n])).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.blocks
            .iter()
            .flatten()
            .all(|b| b.iter().all(|v| v.is_finite()))
    }

    pub fn block_norms(&self) -> Vec<f64> {
        self.blocks
            .iter()
            .map(|b| b.as_ref().map_or(0.0, |v| crate::math::norm(v)))
            .collect()
    }

    pub fn norm(&self) -> f64 {
        self.block_norms().iter().map(|n| n * n).sum::<f64>().sqrt()
    }

    /// `self += scale * other` on blocks present in both.
    pub fn add_scaled(&mut self, other: &GradientSet, scale: f64) {
        for (a, b) in self.blocks.iter_mut().zip(&other.blocks) {
            if let (Some(a), Some(b)) = (a.as_mut(), b.as_ref()) {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += scale * y;
                }
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for b in self.blocks.iter_mut().flatten() {
            for v in b.iter_mut() {
                *v *= s;
            }
        }
    }

    /// Largest `|a − b| / max(|a|, |b|, floor)` over blocks present in both.
    pub fn max_rel_diff(&self, other: &GradientSet, floor: f64) -> f64 {
        let mut worst: f64 = 0.0;
        for (a, b) in self.blocks.iter().zip(&other.blocks) {
            if let (Some(a), Some(b)) = (a, b) {
                for (x, y) in a.iter().zip(b) {
                    let denom = x.abs().max(y.abs()).max(floor);
                    worst = worst.max((x - y).abs() / denom);
                }
            }
        }
        worst
    }

    /// `‖a − b‖ / max(‖b‖, floor)` over the concatenated blocks.
    pub fn rel_error(&self, reference: &GradientSet, floor: f64) -> f64 {
        let mut diff = 0.0;
        let mut refn = 0.0;
        for (a, b) in self.blocks.iter().zip(&reference.blocks) {
            if let (Some(a), Some(b)) = (a, b) {
                for (x, y) in a.iter().zip(b) {
                    diff += (x - y) * (x - y);
                    refn += y * y;
                }
            }
        }
        diff.sqrt() / refn.sqrt().max(floor)
    }
}
