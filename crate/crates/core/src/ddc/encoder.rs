use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::math::sigmoid;

/// K frozen random sigmoid features T⁽ⁱ⁾(z) = σ(w⁽ⁱ⁾·z + b⁽ⁱ⁾).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DdcBasis {
    /// `K × dim`, one projection per row.
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl DdcBasis {
    pub fn k(&self) -> usize {
        self.w.nrows()
    }

    pub fn dim(&self) -> usize {
        self.w.ncols()
    }
}

/// Draws `w` and `b` entries from a standard normal.
pub fn make_basis<R: Rng + ?Sized>(k: usize, dim: usize, rng: &mut R) -> Result<DdcBasis> {
    if k == 0 || dim == 0 {
        return Err(Error::InvalidArgument(format!(
            "basis needs K >= 1 and dim >= 1, got K={k}, dim={dim}"
        )));
    }
    let w = DMatrix::from_fn(k, dim, |_, _| StandardNormal.sample(&mut *rng));
    let b = DVector::from_fn(k, |_, _| StandardNormal.sample(&mut *rng));
    Ok(DdcBasis { w, b })
}

/// Encoding functions for one latent layer.
///
/// `Sigmoid` is the random DDC basis used in practice. `Indicator` is the
/// one-hot code over all `2^dim` binary states, which represents any function
/// of a binary layer exactly. `Identity` (T(z) = z) reduces the DDC to a
/// mean-field code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Encoder {
    Sigmoid(DdcBasis),
    Indicator { dim: usize },
    Identity { dim: usize },
}

impl Encoder {
    pub fn k(&self) -> usize {
        match self {
            Encoder::Sigmoid(b) => b.k(),
            Encoder::Indicator { dim } => 1 << dim,
            Encoder::Identity { dim } => *dim,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Encoder::Sigmoid(b) => b.dim(),
            Encoder::Indicator { dim } | Encoder::Identity { dim } => *dim,
        }
    }

    pub fn encode(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_len("encoder input", self.dim(), z.len())?;
        Ok(match self {
            Encoder::Sigmoid(basis) => {
                let pre = &basis.w * DVector::from_column_slice(z) + &basis.b;
                pre.iter().map(|&u| sigmoid(u)).collect()
            }
            Encoder::Indicator { dim } => {
                let mut code = 0usize;
                for (i, &v) in z.iter().enumerate() {
                    if v == 1.0 {
                        code |= 1 << i;
                    } else if v != 0.0 {
                        return Err(Error::InvalidArgument(format!(
                            "indicator encoder needs binary input, got {v}"
                        )));
                    }
                }
                let mut t = vec![0.0; 1 << dim];
                t[code] = 1.0;
                t
            }
            Encoder::Identity { .. } => z.to_vec(),
        })
    }

    /// Encodes each row of an `N × dim` matrix into an `N × K` matrix.
    pub fn encode_rows(&self, zs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_len("encoder input", self.dim(), zs.ncols())?;
        match self {
            Encoder::Sigmoid(basis) => {
                let mut pre = zs * basis.w.transpose();
                for mut row in pre.row_iter_mut() {
                    for (v, b) in row.iter_mut().zip(basis.b.iter()) {
                        *v = sigmoid(*v + b);
                    }
                }
                Ok(pre)
            }
            _ => {
                let mut out = DMatrix::zeros(zs.nrows(), self.k());
                for (i, row) in zs.row_iter().enumerate() {
                    let z: Vec<f64> = row.iter().copied().collect();
                    out.row_mut(i).copy_from_slice(&self.encode(&z)?);
                }
                Ok(out)
            }
        }
    }
}
