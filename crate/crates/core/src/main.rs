use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use ddchm::cli::{
    export_samples, ingest_binary_mnist, ingest_patches, kernel_for, load_config, read_csv,
    run_experiment, write_csv, BandwidthMode, PatchOptions,
};
use ddchm::eval::{mmd2_unbiased, relative_mmd_test};
use ddchm::wakesleep::Checkpoint;

#[derive(Parser)]
#[command(
    name = "ddchm",
    version,
    about = "Train and evaluate DDC Helmholtz machines"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run {
        config: PathBuf,
        /// Override the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw samples of x from a checkpoint.
    Sample {
        checkpoint: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Unbiased MMD² between two sample files, or the relative test when a
    /// third is given.
    EvalMmd {
        reference: PathBuf,
        y: PathBuf,
        z: Option<PathBuf>,
        /// `median` or a positive bandwidth.
        #[arg(long, default_value = "median")]
        bandwidth: BandwidthMode,
    },
    /// Extract preprocessed random patches from images into a CSV.
    IngestPatches {
        images: Vec<PathBuf>,
        #[arg(long, default_value_t = 16)]
        patch_size: u32,
        #[arg(long, default_value_t = 10_000)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        no_log: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Binarise an IDX3 image file into a CSV.
    IngestMnist {
        idx: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Serialize)]
struct TwoSample {
    n: usize,
    n_y: usize,
    bandwidth: f64,
    mmd2: f64,
}

fn print_json<T: Serialize>(v: &T) -> ddchm::Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn run(cli: Cli) -> ddchm::Result<()> {
    match cli.command {
        Command::Run { config, out } => {
            let mut cfg = load_config(&config)?;
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            let outcome = run_experiment(&cfg)?;
            if let Some(h) = &outcome.trace.halted {
                eprintln!("training halted early: {h}");
            }
            eprintln!("artifacts in {}", outcome.output_dir.display());
            print_json(&outcome.report)
        }
        Command::Sample {
            checkpoint,
            n,
            seed,
            out,
        } => export_samples(&Checkpoint::load(&checkpoint)?, n, &out, seed),
        Command::EvalMmd {
            reference,
            y,
            z,
            bandwidth,
        } => {
            let x = read_csv(&reference)?;
            let y = read_csv(&y)?;
            let kernel = kernel_for(bandwidth, &x)?;
            match z {
                Some(z) => print_json(&relative_mmd_test(&x, &y, &read_csv(&z)?, &kernel)?),
                None => print_json(&TwoSample {
                    n: x.nrows(),
                    n_y: y.nrows(),
                    bandwidth: kernel.bandwidth,
                    mmd2: mmd2_unbiased(&x, &y, &kernel)?,
                }),
            }
        }
        Command::IngestPatches {
            images,
            patch_size,
            count,
            seed,
            no_log,
            out,
        } => {
            let options = PatchOptions {
                log_transform: !no_log,
                ..PatchOptions::default()
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data = ingest_patches(&images, patch_size, count, &options, &mut rng)?;
            write_csv(&out, &data.rows, "x")?;
            print_json(&data.provenance)
        }
        Command::IngestMnist {
            idx,
            threshold,
            out,
        } => {
            let data = ingest_binary_mnist(&idx, threshold)?;
            write_csv(&out, &data.rows, "x")?;
            print_json(&data.provenance)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
