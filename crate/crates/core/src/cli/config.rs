use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ddc::DdcConfig;
use crate::error::{Error, Result};
use crate::eval::HmcConfig;
use crate::wakesleep::TrainConfig;

/// Version of the config file format; bumped on incompatible changes.
pub const CONFIG_FORMAT_VERSION: u32 = 1;

fn default_format() -> u32 {
    CONFIG_FORMAT_VERSION
}
fn default_output() -> PathBuf {
    PathBuf::from("out")
}

/// One experiment: what to train, on which data, and how to evaluate it.
/// Relative paths are resolved against the config file's directory at load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_format")]
    pub format_version: u32,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    pub model: ModelSpec,
    #[serde(default)]
    pub recognition: RecognitionSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub data: DataSpec,
    #[serde(default)]
    pub eval: EvalSpec,
}

fn two() -> usize {
    2
}
fn one() -> usize {
    1
}
fn three() -> f64 {
    3.0
}
fn tenth() -> f64 {
    0.1
}
fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    /// Mixture → Laplace → Gaussian hierarchy. Ground-truth parameters are
    /// drawn from `parameter_seed`; with `init_at_truth` training starts
    /// there, otherwise from an independent draw.
    Synthetic {
        #[serde(default = "two")]
        dx: usize,
        #[serde(default = "two")]
        d1: usize,
        #[serde(default = "one")]
        d2: usize,
        #[serde(default = "three")]
        m: f64,
        #[serde(default = "tenth")]
        sigma: f64,
        #[serde(default)]
        parameter_seed: u64,
        #[serde(default = "yes")]
        init_at_truth: bool,
    },
    /// Sigmoid belief network; the observed width comes from the data.
    /// Weights start i.i.d. N(0, init_scale²).
    Sbn {
        latent: Vec<usize>,
        #[serde(default = "tenth")]
        init_scale: f64,
        #[serde(default)]
        parameter_seed: u64,
    },
}

impl ModelSpec {
    pub fn num_latent(&self) -> usize {
        match self {
            ModelSpec::Synthetic { .. } => 2,
            ModelSpec::Sbn { latent, .. } => latent.len(),
        }
    }
}

fn hundred() -> usize {
    100
}

/// Recognition network width and encoder counts. `k` defaults to 100 per
/// latent layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecognitionSpec {
    #[serde(default = "hundred")]
    pub hidden: usize,
    #[serde(default)]
    pub k: Option<Vec<usize>>,
    #[serde(default = "yes")]
    pub hidden_bias: bool,
}

impl Default for RecognitionSpec {
    fn default() -> Self {
        Self {
            hidden: 100,
            k: None,
            hidden_bias: true,
        }
    }
}

impl RecognitionSpec {
    pub fn ddc(&self) -> DdcConfig {
        DdcConfig {
            hidden: self.hidden,
            k: self.k.clone().unwrap_or_default(),
            hidden_bias: self.hidden_bias,
        }
    }
}

fn ten_thousand() -> usize {
    10_000
}
fn two_thousand() -> usize {
    2000
}
fn fifth() -> f64 {
    0.2
}
fn half() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSpec {
    /// `n` training rows plus `held_out` rows drawn from the ground-truth
    /// synthetic model.
    Synthetic {
        #[serde(default = "ten_thousand")]
        n: usize,
        #[serde(default = "two_thousand")]
        held_out: usize,
        #[serde(default)]
        seed: u64,
    },
    /// IDX image file binarised at `threshold`. With `test_path` that file
    /// is the held-out set, otherwise a random `held_out_fraction` is.
    Idx {
        path: PathBuf,
        #[serde(default)]
        test_path: Option<PathBuf>,
        #[serde(default = "fifth")]
        held_out_fraction: f64,
        #[serde(default = "half")]
        threshold: f64,
        #[serde(default)]
        seed: u64,
    },
    /// Numeric CSV with a header row, e.g. written by `ingest-patches`.
    Csv {
        path: PathBuf,
        #[serde(default = "fifth")]
        held_out_fraction: f64,
        #[serde(default)]
        seed: u64,
    },
}

impl Default for DataSpec {
    fn default() -> Self {
        DataSpec::Synthetic {
            n: 10_000,
            held_out: 2000,
            seed: 0,
        }
    }
}

/// Written as `"median"` (median pairwise distance of the reference data)
/// or a positive number.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBandwidth", into = "RawBandwidth")]
pub enum BandwidthMode {
    Median,
    Fixed(f64),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum RawBandwidth {
    Value(f64),
    Name(String),
}

impl TryFrom<RawBandwidth> for BandwidthMode {
    type Error = String;
    fn try_from(raw: RawBandwidth) -> std::result::Result<Self, String> {
        match raw {
            RawBandwidth::Value(v) => Ok(BandwidthMode::Fixed(v)),
            RawBandwidth::Name(s) => s.parse(),
        }
    }
}

impl From<BandwidthMode> for RawBandwidth {
    fn from(b: BandwidthMode) -> Self {
        match b {
            BandwidthMode::Median => RawBandwidth::Name("median".into()),
            BandwidthMode::Fixed(v) => RawBandwidth::Value(v),
        }
    }
}

impl std::str::FromStr for BandwidthMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "median" {
            return Ok(BandwidthMode::Median);
        }
        match s.parse::<f64>() {
            Ok(v) if v > 0.0 && v.is_finite() => Ok(BandwidthMode::Fixed(v)),
            _ => Err(format!(
                "expected \"median\" or a positive number, got `{s}`"
            )),
        }
    }
}

fn median() -> BandwidthMode {
    BandwidthMode::Median
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSpec {
    /// Samples generated for export and MMD.
    #[serde(default = "two_thousand")]
    pub samples: usize,
    #[serde(default = "median")]
    pub bandwidth: BandwidthMode,
    #[serde(default)]
    pub seed: u64,
    /// Record MMD against held-out data every this many epochs (0 = never).
    #[serde(default)]
    pub monitor_every: usize,
    #[serde(default)]
    pub hmc: Option<HmcSpec>,
}

impl Default for EvalSpec {
    fn default() -> Self {
        Self {
            samples: 2000,
            bandwidth: BandwidthMode::Median,
            seed: 0,
            monitor_every: 0,
            hmc: None,
        }
    }
}

/// Posterior samples for selected held-out rows (synthetic models only).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HmcSpec {
    /// Row indices into the held-out set.
    pub points: Vec<usize>,
    #[serde(default)]
    pub sampler: HmcConfig,
}

fn bad(key: &str, msg: impl Into<String>) -> Error {
    Error::Config {
        key: key.into(),
        msg: msg.into(),
    }
}

fn toml_error(e: toml::de::Error) -> Error {
    // The parser's message names the offending key and position.
    bad("<file>", e.to_string().trim_end().to_string())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(toml_error)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| bad("<file>", e.to_string()))
    }

    /// Fills every defaulted value so that the echo is self-contained.
    pub fn resolve(&mut self, base: &Path) {
        let absolute = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        absolute(&mut self.output_dir);
        match &mut self.data {
            DataSpec::Idx {
                path, test_path, ..
            } => {
                absolute(path);
                if let Some(t) = test_path {
                    absolute(t);
                }
            }
            DataSpec::Csv { path, .. } => absolute(path),
            DataSpec::Synthetic { .. } => {}
        }
        if self.recognition.k.is_none() {
            self.recognition.k = Some(vec![100; self.model.num_latent()]);
        }
    }

    /// Range and consistency checks; errors carry the offending key path.
    pub fn validate(&self) -> Result<()> {
        if self.format_version != CONFIG_FORMAT_VERSION {
            return Err(bad(
                "format_version",
                format!(
                    "unsupported version {} (expected {CONFIG_FORMAT_VERSION})",
                    self.format_version
                ),
            ));
        }
        self.train.validate()?;
        match &self.model {
            ModelSpec::Synthetic {
                dx, d1, d2, sigma, ..
            } => {
                if *dx == 0 || *d1 == 0 || *d2 == 0 {
                    return Err(bad("model", "layer widths must be >= 1"));
                }
                if !(*sigma > 0.0) {
                    return Err(bad("model.sigma", "must be > 0"));
                }
            }
            ModelSpec::Sbn {
                latent, init_scale, ..
            } => {
                if latent.is_empty() || latent.contains(&0) {
                    return Err(bad(
                        "model.latent",
                        "needs at least one layer, all widths >= 1",
                    ));
                }
                if !(*init_scale >= 0.0 && init_scale.is_finite()) {
                    return Err(bad("model.init_scale", "must be >= 0"));
                }
            }
        }
        if self.recognition.hidden == 0 {
            return Err(bad("recognition.hidden", "must be >= 1"));
        }
        if let Some(k) = &self.recognition.k {
            if k.len() != self.model.num_latent() {
                return Err(bad(
                    "recognition.k",
                    format!(
                        "needs one entry per latent layer ({})",
                        self.model.num_latent()
                    ),
                ));
            }
            if k.contains(&0) {
                return Err(bad("recognition.k", "entries must be >= 1"));
            }
        }
        match &self.data {
            DataSpec::Synthetic { n, held_out, .. } => {
                if !matches!(self.model, ModelSpec::Synthetic { .. }) {
                    return Err(bad("data.source", "synthetic data needs a synthetic model"));
                }
                if *n == 0 {
                    return Err(bad("data.n", "must be >= 1"));
                }
                if *held_out < 4 {
                    return Err(bad("data.held_out", "must be >= 4"));
                }
            }
            DataSpec::Idx {
                path,
                test_path,
                held_out_fraction,
                threshold,
                ..
            } => {
                must_exist("data.path", path)?;
                if let Some(t) = test_path {
                    must_exist("data.test_path", t)?;
                }
                fraction("data.held_out_fraction", *held_out_fraction)?;
                if !(0.0..1.0).contains(threshold) {
                    return Err(bad("data.threshold", "must be in [0, 1)"));
                }
            }
            DataSpec::Csv {
                path,
                held_out_fraction,
                ..
            } => {
                must_exist("data.path", path)?;
                fraction("data.held_out_fraction", *held_out_fraction)?;
            }
        }
        if self.eval.samples < 4 {
            return Err(bad("eval.samples", "must be >= 4"));
        }
        if let BandwidthMode::Fixed(b) = self.eval.bandwidth {
            if !(b > 0.0 && b.is_finite()) {
                return Err(bad(
                    "eval.bandwidth",
                    "must be \"median\" or a positive number",
                ));
            }
        }
        if let Some(h) = &self.eval.hmc {
            if !matches!(self.model, ModelSpec::Synthetic { .. }) {
                return Err(bad(
                    "eval.hmc",
                    "posterior sampling needs continuous latents",
                ));
            }
            h.sampler.validate().map_err(|e| match e {
                Error::Config { key, msg } => bad(&format!("eval.{key}"), msg),
                other => other,
            })?;
        }
        Ok(())
    }
}

fn must_exist(key: &str, path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(bad(key, format!("{} does not exist", path.display())))
    }
}

fn fraction(key: &str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(bad(key, "must be in (0, 1)"))
    }
}

/// Parses, resolves and validates a config file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    let mut config = ExperimentConfig::from_toml(&text)?;
    let base = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    config.resolve(base);
    config.validate()?;
    Ok(config)
}
