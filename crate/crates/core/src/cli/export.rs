use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ingest::write_csv;
use super::run::VERSION;
use crate::error::{Error, Result};
use crate::wakesleep::{Checkpoint, DiagnosticsTrace};

pub fn rows_to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let d = rows.first().map_or(0, |r| r.len());
    DMatrix::from_row_iterator(rows.len(), d, rows.iter().flatten().copied())
}

/// One row per epoch: `epoch`, `grad_norm_<b>` per parameter block,
/// `recognition_residual_<l>` and `approx_residual_<l>` per latent layer,
/// and `mmd` (empty when not monitored).
pub fn write_diagnostics(path: &Path, trace: &DiagnosticsTrace, num_blocks: usize) -> Result<()> {
    let layers = num_blocks - 1;
    let err = |e: csv::Error| Error::Format {
        path: path.to_path_buf(),
        msg: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    let mut header = vec!["epoch".to_string()];
    header.extend((0..num_blocks).map(|b| format!("grad_norm_{b}")));
    header.extend((1..=layers).map(|l| format!("recognition_residual_{l}")));
    header.extend((1..=layers).map(|l| format!("approx_residual_{l}")));
    header.push("mmd".into());
    w.write_record(&header).map_err(err)?;
    for rec in &trace.epochs {
        let mut row = vec![rec.epoch.to_string()];
        row.extend(rec.grad_norms.iter().map(f64::to_string));
        row.extend(rec.recognition_residuals.iter().map(f64::to_string));
        row.extend(rec.approx_residuals.iter().map(f64::to_string));
        row.push(rec.mmd.map(|v| v.to_string()).unwrap_or_default());
        w.write_record(&row).map_err(err)?;
    }
    w.flush()?;
    Ok(())
}

/// Sidecar written next to exported samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleProvenance {
    pub version: String,
    pub checkpoint_format: u32,
    pub n: usize,
    pub seed: u64,
}

/// Path of the provenance sidecar for a sample file: `<out>.provenance.json`.
pub fn sidecar_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".provenance.json");
    PathBuf::from(name)
}

/// `n` ancestral samples of `x` from the checkpointed model as CSV (columns
/// `x0, x1, …`), with the seed recorded in the sidecar.
pub fn export_samples(checkpoint: &Checkpoint, n: usize, out: &Path, seed: u64) -> Result<()> {
    let model = &checkpoint.trainer.model;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = rows_to_matrix(&model.sample_x(n, &mut rng)?);
    let rows = if n == 0 {
        DMatrix::zeros(0, model.dim(0))
    } else {
        rows
    };
    write_csv(out, &rows, "x")?;
    let record = SampleProvenance {
        version: VERSION.into(),
        checkpoint_format: checkpoint.format_version,
        n,
        seed,
    };
    std::fs::write(
        sidecar_path(out),
        serde_json::to_string_pretty(&record)? + "\n",
    )?;
    Ok(())
}
