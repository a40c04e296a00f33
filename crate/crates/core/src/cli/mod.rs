//! Experiment runner: config files, dataset ingestion, training
//! orchestration and artifact export. The `ddchm` binary is a thin layer
//! over these functions.

mod config;
mod export;
mod ingest;
mod run;

pub use config::{
    load_config, BandwidthMode, DataSpec, EvalSpec, ExperimentConfig, HmcSpec, ModelSpec,
    RecognitionSpec, CONFIG_FORMAT_VERSION,
};
pub use export::{
    export_samples, rows_to_matrix, sidecar_path, write_diagnostics, SampleProvenance,
};
pub use ingest::{
    extract_patch, ingest_binary_mnist, ingest_patches, read_csv, write_csv, DataMatrix,
    PatchOptions, Provenance, IDX3_UBYTE_MAGIC,
};
pub use run::{initial_model, kernel_for, load_data, run_experiment, Dataset, RunOutcome, VERSION};
