use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use super::config::{BandwidthMode, DataSpec, ExperimentConfig, ModelSpec};
use super::export::{rows_to_matrix, write_diagnostics};
use super::ingest::{ingest_binary_mnist, read_csv, write_csv, DataMatrix, Provenance};
use crate::error::{Error, Result};
use crate::eval::{
    hmc_sample, median_heuristic, mmd2_unbiased, relative_mmd_test, KernelSpec, MmdReport,
    PosteriorTarget,
};
use crate::models::{
    build_sbn, build_synthetic, random_synthetic_params, GenerativeModel, SyntheticParams,
};
use crate::wakesleep::{Checkpoint, DiagnosticsTrace, Trainer};

/// Version string recorded in every artifact directory.
pub const VERSION: &str = concat!("ddchm v", env!("CARGO_PKG_VERSION"));

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Stage {
        stage: name,
        source: Box::new(e),
    })
}

/// Training and held-out observations.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: DataMatrix,
    pub held_out: DataMatrix,
}

/// The model to train and, for synthetic experiments, the parameters that
/// generated the data.
pub fn initial_model(
    spec: &ModelSpec,
    observed_dim: Option<usize>,
) -> Result<(GenerativeModel, Option<SyntheticParams>)> {
    match spec {
        ModelSpec::Synthetic {
            dx,
            d1,
            d2,
            m,
            sigma,
            parameter_seed,
            init_at_truth,
        } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*parameter_seed);
            let mut draw = || SyntheticParams {
                m: *m,
                sigma: *sigma,
                ..random_synthetic_params(*dx, *d1, *d2, &mut rng)
            };
            let truth = draw();
            let start = if *init_at_truth {
                truth.clone()
            } else {
                draw()
            };
            Ok((build_synthetic(&start)?, Some(truth)))
        }
        ModelSpec::Sbn {
            latent,
            init_scale,
            parameter_seed,
        } => {
            let d = observed_dim.ok_or_else(|| {
                Error::InvalidArgument("an SBN needs data to fix its observed width".into())
            })?;
            let mut model = build_sbn(latent, d)?;
            let mut rng = ChaCha8Rng::seed_from_u64(*parameter_seed);
            if *init_scale > 0.0 {
                let normal = Normal::new(0.0, *init_scale).expect("positive scale");
                for c in model.conditionals.iter_mut() {
                    c.theta
                        .iter_mut()
                        .for_each(|v| *v = normal.sample(&mut rng));
                }
            }
            Ok((model, None))
        }
    }
}

fn split(rows: DMatrix<f64>, fraction: f64, seed: u64, provenance: &Provenance) -> Dataset {
    let n = rows.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_held = ((n as f64 * fraction).round() as usize).clamp(1, n.saturating_sub(1).max(1));
    let tag = |what: &str| Provenance {
        source: provenance.source.clone(),
        steps: provenance
            .steps
            .iter()
            .cloned()
            .chain([format!("{what} split (fraction {fraction}, seed {seed})")])
            .collect(),
    };
    Dataset {
        held_out: DataMatrix {
            rows: rows.select_rows(order[..n_held].iter()),
            provenance: tag("held-out"),
        },
        train: DataMatrix {
            rows: rows.select_rows(order[n_held..].iter()),
            provenance: tag("training"),
        },
    }
}

pub fn load_data(spec: &DataSpec, truth: Option<&GenerativeModel>) -> Result<Dataset> {
    match spec {
        DataSpec::Synthetic { n, held_out, seed } => {
            let model = truth.ok_or_else(|| {
                Error::InvalidArgument("synthetic data needs a synthetic model".into())
            })?;
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let mut part = |count: usize, what: &str| -> Result<DataMatrix> {
                Ok(DataMatrix {
                    rows: rows_to_matrix(&model.sample_x(count, &mut rng)?),
                    provenance: Provenance {
                        source: format!("synthetic ground-truth model, seed {seed}"),
                        steps: vec![format!("{count} {what} rows")],
                    },
                })
            };
            let train = part(*n, "training")?;
            let held_out = part(*held_out, "held-out")?;
            Ok(Dataset { train, held_out })
        }
        DataSpec::Idx {
            path,
            test_path,
            held_out_fraction,
            threshold,
            seed,
        } => {
            let data = ingest_binary_mnist(path, *threshold)?;
            match test_path {
                Some(t) => Ok(Dataset {
                    train: data,
                    held_out: ingest_binary_mnist(t, *threshold)?,
                }),
                None => Ok(split(
                    data.rows,
                    *held_out_fraction,
                    *seed,
                    &data.provenance,
                )),
            }
        }
        DataSpec::Csv {
            path,
            held_out_fraction,
            seed,
        } => {
            let rows = read_csv(path)?;
            let provenance = Provenance {
                source: format!("csv:{}", path.display()),
                steps: Vec::new(),
            };
            Ok(split(rows, *held_out_fraction, *seed, &provenance))
        }
    }
}

pub fn kernel_for(mode: BandwidthMode, reference: &DMatrix<f64>) -> Result<KernelSpec> {
    match mode {
        BandwidthMode::Median => KernelSpec::new(median_heuristic(reference)?),
        BandwidthMode::Fixed(b) => KernelSpec::new(b),
    }
}

#[derive(Debug, Serialize)]
struct Seeds {
    parameters: Option<u64>,
    data: u64,
    train: u64,
    eval: u64,
    hmc: Option<u64>,
}

#[derive(Debug, Serialize)]
struct RunProvenance<'a> {
    version: &'static str,
    seeds: Seeds,
    train_data: &'a Provenance,
    held_out_data: &'a Provenance,
    epochs_completed: usize,
    halted: Option<&'a str>,
    /// What the relative MMD test compares the trained model against.
    mmd_reference: &'static str,
    hmc_acceptance: Vec<f64>,
}

/// Everything a finished run produced, besides the files.
#[derive(Debug)]
pub struct RunOutcome {
    pub output_dir: PathBuf,
    pub trace: DiagnosticsTrace,
    pub report: MmdReport,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn write_report_csv(path: &Path, r: &MmdReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    w.serialize(r).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    w.flush()?;
    Ok(())
}

/// Posterior samples for one data point, started from the best of 100
/// ancestral draws under the joint density.
fn hmc_dump(
    model: &GenerativeModel,
    x: &[f64],
    sampler: &crate::eval::HmcConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(DMatrix<f64>, f64)> {
    let mut best: Option<(f64, Vec<f64>)> = None;
    for _ in 0..100 {
        let s = model.sample(rng)?;
        let lp = model.log_joint(x, &s.latents)?;
        if lp.is_finite() && best.as_ref().is_none_or(|(b, _)| lp > *b) {
            best = Some((lp, s.latents.concat()));
        }
    }
    let init = best
        .ok_or_else(|| Error::NonFinite("log joint at every HMC starting candidate".into()))?
        .1;
    let out = hmc_sample(&PosteriorTarget { model, x }, &init, sampler, rng)?;
    Ok((out.samples, out.acceptance_rate))
}

/// Runs one experiment and writes its artifacts (see the CSV schema docs).
/// A failing stage is reported by name; files from earlier stages remain.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunOutcome> {
    stage("config", config.validate())?;
    let dir = config.output_dir.clone();
    stage("output", fs::create_dir_all(&dir).map_err(Error::from))?;
    stage(
        "config",
        config
            .to_toml()
            .and_then(|t| Ok(fs::write(dir.join("config.toml"), t)?)),
    )?;

    let truth_model = match &config.model {
        spec @ ModelSpec::Synthetic { .. } => {
            let (_, truth) = stage("model", initial_model(spec, None))?;
            let truth = truth.expect("synthetic models carry their truth");
            stage("model", write_json(&dir.join("truth.json"), &truth))?;
            Some(stage("model", build_synthetic(&truth))?)
        }
        ModelSpec::Sbn { .. } => None,
    };
    let data = stage("data", load_data(&config.data, truth_model.as_ref()))?;
    let (model, _) = stage(
        "model",
        initial_model(&config.model, Some(data.train.rows.ncols())),
    )?;
    let initial = model.clone();

    let mut trainer = stage(
        "train",
        Trainer::with_random_ddc(model, &config.recognition.ddc(), config.train.clone()),
    )?;
    let held = &data.held_out.rows;
    let kernel = stage("mmd", kernel_for(config.eval.bandwidth, held))?;
    let every = config.eval.monitor_every;
    let mut monitor_rng = ChaCha8Rng::seed_from_u64(config.eval.seed ^ 0x6d6f_6e69);
    let mut monitor_error = None;
    let trace = stage(
        "train",
        trainer.train(&data.train.rows, config.train.epochs, |t| {
            if every == 0 || (t.epoch % every != 0) {
                return None;
            }
            let r = t
                .model
                .sample_x(config.eval.samples, &mut monitor_rng)
                .map(|s| rows_to_matrix(&s))
                .and_then(|s| mmd2_unbiased(&s, held, &kernel));
            match r {
                Ok(v) => Some(v),
                Err(e) => {
                    monitor_error.get_or_insert(e);
                    None
                }
            }
        }),
    )?;
    stage(
        "diagnostics",
        write_diagnostics(
            &dir.join("diagnostics.csv"),
            &trace,
            trainer.model.num_blocks(),
        ),
    )?;
    if let Some(e) = monitor_error {
        return Err(Error::Stage {
            stage: "mmd",
            source: Box::new(e),
        });
    }
    stage(
        "checkpoint",
        Checkpoint::new(trainer.clone()).save(&dir.join("checkpoint.json")),
    )?;

    let mut eval_rng = ChaCha8Rng::seed_from_u64(config.eval.seed);
    let samples = stage(
        "samples",
        trainer
            .model
            .sample_x(config.eval.samples, &mut eval_rng)
            .map(|s| rows_to_matrix(&s)),
    )?;
    stage(
        "samples",
        write_csv(&dir.join("samples.csv"), &samples, "x"),
    )?;

    let (reference, reference_name) = match &truth_model {
        Some(t) => (t, "ground-truth model"),
        None => (&initial, "initial model"),
    };
    let reference_samples = stage(
        "mmd",
        reference
            .sample_x(config.eval.samples, &mut eval_rng)
            .map(|s| rows_to_matrix(&s)),
    )?;
    let report = stage(
        "mmd",
        relative_mmd_test(held, &samples, &reference_samples, &kernel),
    )?;
    stage("mmd", write_json(&dir.join("mmd_report.json"), &report))?;
    stage(
        "mmd",
        write_report_csv(&dir.join("mmd_report.csv"), &report),
    )?;

    let mut acceptance = Vec::new();
    let hmc_seed = config.eval.hmc.as_ref().map(|h| h.sampler.seed);
    if let Some(h) = &config.eval.hmc {
        let mut rng = ChaCha8Rng::seed_from_u64(h.sampler.seed);
        for &i in &h.points {
            if i >= held.nrows() {
                return Err(Error::Stage {
                    stage: "hmc",
                    source: Box::new(Error::InvalidArgument(format!(
                        "point {i} is outside the {} held-out rows",
                        held.nrows()
                    ))),
                });
            }
            let x: Vec<f64> = held.row(i).iter().copied().collect();
            let (s, acc) = stage("hmc", hmc_dump(&trainer.model, &x, &h.sampler, &mut rng))?;
            stage(
                "hmc",
                write_csv(&dir.join(format!("hmc_point_{i}.csv")), &s, "z"),
            )?;
            acceptance.push(acc);
        }
    }

    let data_seed = match &config.data {
        DataSpec::Synthetic { seed, .. }
        | DataSpec::Idx { seed, .. }
        | DataSpec::Csv { seed, .. } => *seed,
    };
    let parameter_seed = match &config.model {
        ModelSpec::Synthetic { parameter_seed, .. } | ModelSpec::Sbn { parameter_seed, .. } => {
            Some(*parameter_seed)
        }
    };
    let provenance = RunProvenance {
        version: VERSION,
        seeds: Seeds {
            parameters: parameter_seed,
            data: data_seed,
            train: config.train.seed,
            eval: config.eval.seed,
            hmc: hmc_seed,
        },
        train_data: &data.train.provenance,
        held_out_data: &data.held_out.provenance,
        epochs_completed: trace.epochs.len(),
        halted: trace.halted.as_deref(),
        mmd_reference: reference_name,
        hmc_acceptance: acceptance,
    };
    stage(
        "provenance",
        write_json(&dir.join("provenance.json"), &provenance),
    )?;
    Ok(RunOutcome {
        output_dir: dir,
        trace,
        report,
    })
}
