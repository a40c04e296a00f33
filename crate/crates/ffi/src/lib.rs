//! C ABI over `ddchm`: build a trainer from a TOML description, train it on
//! a row-major data buffer, draw samples, checkpoint it, and compute MMD.
//!
//! Every function returns a [`DdchmStatus`]; on failure a message is
//! available from [`ddchm_last_error`] on the same thread. Handles are
//! opaque and must be released with [`ddchm_trainer_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use ddchm::cli::{initial_model, ModelSpec, RecognitionSpec};
use ddchm::eval::{median_heuristic, mmd2_unbiased, relative_mmd_test, KernelSpec};
use ddchm::wakesleep::{Checkpoint, TrainConfig, Trainer};
use ddchm::Error;
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

/// Result of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DdchmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Io = 4,
    Format = 5,
    Numerical = 6,
    Version = 7,
    Panic = 8,
}

/// Opaque trainer: model parameters, recognition network, readouts and
/// optimiser state.
pub struct DdchmTrainer {
    inner: Trainer,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> DdchmStatus {
    match e {
        Error::Config { .. } => DdchmStatus::Config,
        Error::Io(_) => DdchmStatus::Io,
        Error::Format { .. } | Error::Json(_) | Error::Image(_) => DdchmStatus::Format,
        Error::CheckpointVersion { .. } => DdchmStatus::Version,
        Error::NonFinite(_) | Error::Factorization { .. } | Error::OutsideDomain { .. } => {
            DdchmStatus::Numerical
        }
        Error::Stage { source, .. } => status_of(source),
        _ => DdchmStatus::InvalidArgument,
    }
}

/// Runs `f`, converting errors and panics into a status plus message.
fn guard<F: FnOnce() -> Result<(), (DdchmStatus, String)>>(f: F) -> DdchmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DdchmStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            DdchmStatus::Panic
        }
    }
}

fn lib<T>(r: ddchm::Result<T>) -> Result<T, (DdchmStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn invalid(msg: impl Into<String>) -> (DdchmStatus, String) {
    (DdchmStatus::InvalidArgument, msg.into())
}

fn null(what: &str) -> (DdchmStatus, String) {
    (DdchmStatus::NullPointer, format!("{what} is null"))
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, (DdchmStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not valid UTF-8")))
}

/// Row-major `rows × cols` buffer as a matrix.
unsafe fn matrix(
    p: *const f64,
    rows: usize,
    cols: usize,
    what: &str,
) -> Result<DMatrix<f64>, (DdchmStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    let len = rows
        .checked_mul(cols)
        .ok_or_else(|| invalid(format!("{what} dimensions overflow")))?;
    Ok(DMatrix::from_row_slice(
        rows,
        cols,
        std::slice::from_raw_parts(p, len),
    ))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainerSpec {
    model: ModelSpec,
    /// Observed width for sigmoid belief networks.
    #[serde(default)]
    observed_dim: Option<usize>,
    #[serde(default)]
    recognition: RecognitionSpec,
    #[serde(default)]
    train: TrainConfig,
}

/// Message for the most recent failure on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ddchm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn ddchm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Builds a trainer from TOML with `[model]`, optional `observed_dim`,
/// `[recognition]` and `[train]` sections, using the same keys as the
/// experiment config.
///
/// # Safety
/// `spec_toml` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ddchm_trainer_new(
    spec_toml: *const c_char,
    out: *mut *mut DdchmTrainer,
) -> DdchmStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let text = c_str(spec_toml, "spec_toml")?;
        let spec: TrainerSpec =
            toml::from_str(text).map_err(|e| (DdchmStatus::Config, e.to_string()))?;
        lib(spec.train.validate())?;
        let (model, _) = lib(initial_model(&spec.model, spec.observed_dim))?;
        let mut recognition = spec.recognition;
        if recognition.k.is_none() {
            recognition.k = Some(vec![100; spec.model.num_latent()]);
        }
        let inner = lib(Trainer::with_random_ddc(
            model,
            &recognition.ddc(),
            spec.train,
        ))?;
        *out = Box::into_raw(Box::new(DdchmTrainer { inner }));
        Ok(())
    })
}

/// Releases a trainer; null is ignored.
///
/// # Safety
/// `trainer` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ddchm_trainer_free(trainer: *mut DdchmTrainer) {
    if !trainer.is_null() {
        drop(Box::from_raw(trainer));
    }
}

/// Width of the observed layer.
///
/// # Safety
/// `trainer` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ddchm_trainer_observed_dim(
    trainer: *const DdchmTrainer,
    out: *mut usize,
) -> DdchmStatus {
    guard(|| {
        let t = trainer.as_ref().ok_or_else(|| null("trainer"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = t.inner.model.dim(0);
        Ok(())
    })
}

/// Trains for `epochs` epochs on `rows × cols` row-major data. Training
/// that hits a non-finite value stops, keeps the last good state and
/// returns `Numerical`; `epochs_done` (may be null) receives the count of
/// completed epochs either way.
///
/// # Safety
/// `data` must hold `rows × cols` doubles; `trainer` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ddchm_trainer_train(
    trainer: *mut DdchmTrainer,
    data: *const f64,
    rows: usize,
    cols: usize,
    epochs: usize,
    epochs_done: *mut usize,
) -> DdchmStatus {
    guard(|| {
        let t = trainer.as_mut().ok_or_else(|| null("trainer"))?;
        let x = matrix(data, rows, cols, "data")?;
        if cols != t.inner.model.dim(0) {
            return Err(invalid(format!(
                "data has {cols} columns, model observes {}",
                t.inner.model.dim(0)
            )));
        }
        let trace = lib(t.inner.train(&x, epochs, |_| None))?;
        if let Some(done) = epochs_done.as_mut() {
            *done = trace.epochs.len();
        }
        match trace.halted {
            Some(h) => Err((DdchmStatus::Numerical, h)),
            None => Ok(()),
        }
    })
}

/// Writes `n` ancestral samples of x, row-major, into `out` which must hold
/// `n × observed_dim` doubles (`out_len`).
///
/// # Safety
/// `out` must be writable for `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ddchm_trainer_sample(
    trainer: *const DdchmTrainer,
    n: usize,
    seed: u64,
    out: *mut f64,
    out_len: usize,
) -> DdchmStatus {
    guard(|| {
        let t = trainer.as_ref().ok_or_else(|| null("trainer"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let d = t.inner.model.dim(0);
        if out_len != n * d {
            return Err(invalid(format!("out_len is {out_len}, need {n} × {d}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = lib(t.inner.model.sample_x(n, &mut rng))?;
        let dst = std::slice::from_raw_parts_mut(out, out_len);
        for (chunk, row) in dst.chunks_mut(d.max(1)).zip(&rows) {
            chunk.copy_from_slice(row);
        }
        Ok(())
    })
}

/// Saves a versioned JSON checkpoint.
///
/// # Safety
/// `path` must be a nul-terminated string; `trainer` a live handle.
#[no_mangle]
pub unsafe extern "C" fn ddchm_trainer_save(
    trainer: *const DdchmTrainer,
    path: *const c_char,
) -> DdchmStatus {
    guard(|| {
        let t = trainer.as_ref().ok_or_else(|| null("trainer"))?;
        let path = c_str(path, "path")?;
        lib(Checkpoint::new(t.inner.clone()).save(Path::new(path)))
    })
}

/// Restores a trainer saved by [`ddchm_trainer_save`] or the CLI.
///
/// # Safety
/// `path` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ddchm_trainer_load(
    path: *const c_char,
    out: *mut *mut DdchmTrainer,
) -> DdchmStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = c_str(path, "path")?;
        let ckpt = lib(Checkpoint::load(Path::new(path)))?;
        *out = Box::into_raw(Box::new(DdchmTrainer {
            inner: ckpt.trainer,
        }));
        Ok(())
    })
}

fn kernel(x: &DMatrix<f64>, bandwidth: f64) -> Result<KernelSpec, (DdchmStatus, String)> {
    if bandwidth > 0.0 {
        lib(KernelSpec::new(bandwidth))
    } else {
        lib(median_heuristic(x).and_then(KernelSpec::new))
    }
}

/// Unbiased MMD² between row-major samples `x` (`nx × dim`) and `y`
/// (`ny × dim`) under a Gaussian kernel. A `bandwidth` ≤ 0 selects the
/// median heuristic on `x`.
///
/// # Safety
/// Buffers must hold the stated number of doubles.
#[no_mangle]
pub unsafe extern "C" fn ddchm_mmd2_unbiased(
    x: *const f64,
    nx: usize,
    y: *const f64,
    ny: usize,
    dim: usize,
    bandwidth: f64,
    out: *mut f64,
) -> DdchmStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let x = matrix(x, nx, dim, "x")?;
        let y = matrix(y, ny, dim, "y")?;
        *out = lib(mmd2_unbiased(&x, &y, &kernel(&x, bandwidth)?))?;
        Ok(())
    })
}

/// Relative three-sample test: is `y` significantly closer to the reference
/// `x` than `z` is? Writes `MMD²_u(x,y) − MMD²_u(x,z)` and the p-value for
/// the null that it is not.
///
/// # Safety
/// Buffers must hold the stated number of doubles.
#[no_mangle]
pub unsafe extern "C" fn ddchm_relative_mmd_test(
    x: *const f64,
    nx: usize,
    y: *const f64,
    ny: usize,
    z: *const f64,
    nz: usize,
    dim: usize,
    bandwidth: f64,
    statistic: *mut f64,
    p_value: *mut f64,
) -> DdchmStatus {
    guard(|| {
        let statistic = statistic.as_mut().ok_or_else(|| null("statistic"))?;
        let p_value = p_value.as_mut().ok_or_else(|| null("p_value"))?;
        let x = matrix(x, nx, dim, "x")?;
        let y = matrix(y, ny, dim, "y")?;
        let z = matrix(z, nz, dim, "z")?;
        let report = lib(relative_mmd_test(&x, &y, &z, &kernel(&x, bandwidth)?))?;
        *statistic = report.statistic;
        *p_value = report.p_value;
        Ok(())
    })
}
