use std::path::{Path, PathBuf};

use image::GrayImage;
use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Where a data matrix came from and what was done to it.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    pub steps: Vec<String>,
}

/// Observations as rows.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    pub rows: DMatrix<f64>,
    pub provenance: Provenance,
}

impl DataMatrix {
    pub fn is_binary(&self) -> bool {
        self.rows.iter().all(|v| *v == 0.0 || *v == 1.0)
    }
}

fn format_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

/// Writes rows with a `prefix0, prefix1, …` header. Floats use the shortest
/// representation that round-trips.
pub fn write_csv(path: &Path, rows: &DMatrix<f64>, prefix: &str) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let header: Vec<String> = (0..rows.ncols()).map(|j| format!("{prefix}{j}")).collect();
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for r in rows.row_iter() {
        w.write_record(r.iter().map(|v| v.to_string()))
            .map_err(|e| csv_err(path, e))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a numeric CSV with a header row.
pub fn read_csv(path: &Path) -> Result<DMatrix<f64>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let cols = r.headers().map_err(|e| csv_err(path, e))?.len();
    let mut values = Vec::new();
    let mut n = 0;
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        for field in rec.iter() {
            let v: f64 = field.trim().parse().map_err(|_| {
                format_err(path, format!("row {}: `{field}` is not a number", i + 1))
            })?;
            if !v.is_finite() {
                return Err(format_err(path, format!("row {}: non-finite value", i + 1)));
            }
            values.push(v);
        }
        n += 1;
    }
    Ok(DMatrix::from_row_slice(n, cols, &values))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => format_err(path, format!("{other:?}")),
    }
}

/// Magic number of an IDX file holding unsigned bytes in three dimensions.
pub const IDX3_UBYTE_MAGIC: u32 = 0x0000_0803;

/// Reads an IDX3 unsigned-byte image file: a big-endian header of magic
/// `0x00000803`, image count, rows and columns, followed by row-major pixel
/// bytes. Pixels are scaled to [0, 1] and set to 1 when strictly above
/// `threshold`.
pub fn ingest_binary_mnist(path: &Path, threshold: f64) -> Result<DataMatrix> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < 16 {
        return Err(format_err(path, "truncated IDX header"));
    }
    let word = |i: usize| u32::from_be_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap());
    if word(0) != IDX3_UBYTE_MAGIC {
        return Err(format_err(
            path,
            format!(
                "bad magic {:#010x}, expected {IDX3_UBYTE_MAGIC:#010x}",
                word(0)
            ),
        ));
    }
    let (n, h, w) = (word(1) as usize, word(2) as usize, word(3) as usize);
    if h == 0 || w == 0 {
        return Err(format_err(path, format!("image dims {h}×{w}")));
    }
    let expected = n * h * w;
    if bytes.len() - 16 != expected {
        return Err(format_err(
            path,
            format!(
                "header declares {n} images of {h}×{w} ({expected} bytes), file has {}",
                bytes.len() - 16
            ),
        ));
    }
    let rows = DMatrix::from_row_iterator(
        n,
        h * w,
        bytes[16..].iter().map(|&b| {
            if b as f64 / 255.0 > threshold {
                1.0
            } else {
                0.0
            }
        }),
    );
    Ok(DataMatrix {
        rows,
        provenance: Provenance {
            source: format!("idx3:{} ({n} images, {h}×{w})", path.display()),
            steps: vec![format!("scale to [0,1]; binarise at > {threshold}")],
        },
    })
}

/// Preprocessing applied to extracted patches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchOptions {
    /// Replace intensity `v ∈ [0, 1]` by `ln(v + log_offset)`.
    pub log_transform: bool,
    pub log_offset: f64,
    /// Subtract each pixel's mean over the patch set.
    pub subtract_mean: bool,
    /// Scale globally so the average per-pixel variance is one.
    pub unit_variance: bool,
}

impl Default for PatchOptions {
    fn default() -> Self {
        Self {
            log_transform: true,
            log_offset: 1.0 / 255.0,
            subtract_mean: true,
            unit_variance: true,
        }
    }
}

/// `size × size` window with top-left corner `(x, y)`, row-major, intensities
/// in [0, 1].
pub fn extract_patch(img: &GrayImage, x: u32, y: u32, size: u32) -> Vec<f64> {
    let mut out = Vec::with_capacity((size * size) as usize);
    for r in y..y + size {
        for c in x..x + size {
            out.push(img.get_pixel(c, r).0[0] as f64 / 255.0);
        }
    }
    out
}

/// `count` patches from uniformly chosen images and locations, then the
/// configured preprocessing.
pub fn ingest_patches<R: Rng + ?Sized>(
    sources: &[PathBuf],
    patch_size: u32,
    count: usize,
    options: &PatchOptions,
    rng: &mut R,
) -> Result<DataMatrix> {
    if sources.is_empty() {
        return Err(Error::InvalidArgument("no source images".into()));
    }
    if patch_size == 0 {
        return Err(Error::InvalidArgument("patch size must be >= 1".into()));
    }
    let images = sources
        .iter()
        .map(|p| {
            let img = image::open(p)?.into_luma8();
            if img.width() < patch_size || img.height() < patch_size {
                return Err(format_err(
                    p,
                    format!(
                        "{}×{} image is smaller than the patch",
                        img.width(),
                        img.height()
                    ),
                ));
            }
            Ok(img)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rows = DMatrix::zeros(count, (patch_size * patch_size) as usize);
    for i in 0..count {
        let img = &images[rng.random_range(0..images.len())];
        let x = rng.random_range(0..=img.width() - patch_size);
        let y = rng.random_range(0..=img.height() - patch_size);
        let patch = extract_patch(img, x, y, patch_size);
        rows.row_mut(i).copy_from_slice(&patch);
    }
    let mut steps = vec![format!(
        "{count} random {patch_size}×{patch_size} patches, intensities scaled to [0,1]"
    )];
    preprocess(&mut rows, options, &mut steps)?;
    Ok(DataMatrix {
        rows,
        provenance: Provenance {
            source: sources
                .iter()
                .map(|p| p.display().to_string())
                .collect::<Vec<_>>()
                .join(", "),
            steps,
        },
    })
}

fn preprocess(
    rows: &mut DMatrix<f64>,
    options: &PatchOptions,
    steps: &mut Vec<String>,
) -> Result<()> {
    if options.log_transform {
        if !(options.log_offset > 0.0) {
            return Err(Error::InvalidArgument("log offset must be > 0".into()));
        }
        rows.apply(|v| *v = (*v + options.log_offset).ln());
        steps.push(format!("ln(v + {})", options.log_offset));
    }
    let n = rows.nrows();
    if options.subtract_mean && n > 0 {
        let mean = rows.row_mean();
        for mut r in rows.row_iter_mut() {
            r -= &mean;
        }
        steps.push("per-pixel mean subtracted".into());
    }
    if options.unit_variance && n > 1 {
        let mean = rows.row_mean();
        let avg_var = rows
            .column_iter()
            .zip(mean.iter())
            .map(|(c, m)| c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64)
            .sum::<f64>()
            / rows.ncols() as f64;
        if avg_var > 0.0 {
            let s = avg_var.sqrt();
            *rows /= s;
            steps.push(format!("divided by {s} for unit average variance"));
        }
    }
    Ok(())
}
