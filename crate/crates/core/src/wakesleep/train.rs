use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::sleep::{sleep_phase, sleep_sample};
use super::wake::wake_gradients;
use crate::ddc::{
    make_basis, ApproxOptions, BetaMode, DdcConfig, Encoder, FitMode, FunctionApprox,
    RecognitionNet,
};
use crate::error::{Error, Result};
use crate::expfam::Link;
use crate::models::GenerativeModel;
use crate::params::GradientSet;

fn default_sleep_samples() -> usize {
    200
}
fn default_minibatch() -> usize {
    100
}
fn default_learning_rate() -> f64 {
    1e-4
}
fn default_epochs() -> usize {
    1000
}
fn default_ridge() -> f64 {
    1e-4
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

/// Training hyperparameters. Defaults follow the synthetic experiment
/// (200 sleep samples, lr 1e-4, 1000 epochs, Adam).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_sleep_samples")]
    pub sleep_samples: usize,
    #[serde(default = "default_minibatch")]
    pub minibatch: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    /// Ridge penalty per sleep sample (the solver uses `ridge × S`).
    #[serde(default = "default_ridge")]
    pub ridge: f64,
    #[serde(default = "default_beta1")]
    pub adam_beta1: f64,
    #[serde(default = "default_beta2")]
    pub adam_beta2: f64,
    #[serde(default = "default_eps")]
    pub adam_eps: f64,
    #[serde(default)]
    pub seed: u64,
    /// Parameter blocks kept fixed.
    #[serde(default)]
    pub freeze: Vec<usize>,
    /// Keep the observation variances Ψ fixed while Λ learns.
    #[serde(default)]
    pub freeze_observation_noise: bool,
    /// Extra sleep phases every n minibatches; 0 means once per epoch.
    #[serde(default)]
    pub sleep_every_n_batches: usize,
    #[serde(default)]
    pub beta_mode: BetaMode,
    #[serde(default)]
    pub fit_mode: FitMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            sleep_samples: default_sleep_samples(),
            minibatch: default_minibatch(),
            learning_rate: default_learning_rate(),
            epochs: default_epochs(),
            ridge: default_ridge(),
            adam_beta1: default_beta1(),
            adam_beta2: default_beta2(),
            adam_eps: default_eps(),
            seed: 0,
            freeze: Vec::new(),
            freeze_observation_noise: false,
            sleep_every_n_batches: 0,
            beta_mode: BetaMode::Analytic,
            fit_mode: FitMode::Refit,
        }
    }
}

impl TrainConfig {
    /// Range checks; errors name the offending key.
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: &str| {
            Err(Error::Config {
                key: format!("train.{key}"),
                msg: msg.into(),
            })
        };
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate", "must be > 0");
        }
        if self.sleep_samples == 0 {
            return bad("sleep_samples", "must be >= 1");
        }
        if self.minibatch == 0 {
            return bad("minibatch", "must be >= 1");
        }
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return bad("ridge", "must be >= 0");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) {
            return bad("adam_beta1", "must be in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("adam_beta2", "must be in [0, 1)");
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps", "must be > 0");
        }
        if let FitMode::Averaged { decay } = self.fit_mode {
            if !(0.0..1.0).contains(&decay) {
                return bad("fit_mode.decay", "must be in [0, 1)");
            }
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }
}

/// Per-epoch diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean gradient norm per parameter block over the epoch's wake steps.
    pub grad_norms: Vec<f64>,
    pub recognition_residuals: Vec<f64>,
    pub approx_residuals: Vec<f64>,
    pub mmd: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsTrace {
    pub epochs: Vec<EpochRecord>,
    /// Reason training stopped early; the model was rolled back to the last
    /// finite parameters.
    pub halted: Option<String>,
}

/// Model, recognition machinery and optimiser state for DDC wake-sleep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trainer {
    pub model: GenerativeModel,
    pub net: RecognitionNet,
    pub encoders: Vec<Encoder>,
    pub approx: Option<FunctionApprox>,
    pub adam: AdamState,
    pub rng: ChaCha8Rng,
    /// Number of completed sleep phases; readouts are tagged with it.
    pub sleep_version: u64,
    pub epoch: usize,
    pub config: TrainConfig,
}

impl Trainer {
    pub fn new(
        model: GenerativeModel,
        net: RecognitionNet,
        encoders: Vec<Encoder>,
        config: TrainConfig,
    ) -> Result<Self> {
        config.validate()?;
        if encoders.len() != model.num_latent() || net.num_layers() != model.num_latent() {
            return Err(Error::InvalidArgument(
                "need one encoder and one readout per latent layer".into(),
            ));
        }
        for (l, e) in encoders.iter().enumerate() {
            if e.dim() != model.dim(l + 1) || e.k() != net.phi[l].nrows() {
                return Err(Error::InvalidArgument(format!(
                    "encoder/readout shape mismatch at layer {}",
                    l + 1
                )));
            }
        }
        let sizes: Vec<usize> = (0..model.num_blocks())
            .map(|l| model.block(l).len())
            .collect();
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Self {
            model,
            net,
            encoders,
            approx: None,
            adam: AdamState::new(&sizes),
            rng,
            sleep_version: 0,
            epoch: 0,
            config,
        })
    }

    /// Draws the random DDC bases and recognition projection from a
    /// generator seeded with `config.seed`, then builds the trainer.
    pub fn with_random_ddc(
        model: GenerativeModel,
        ddc: &DdcConfig,
        config: TrainConfig,
    ) -> Result<Self> {
        let ks = &ddc.k;
        if ks.len() != model.num_latent() {
            return Err(Error::InvalidArgument(format!(
                "need {} encoding-function counts, got {}",
                model.num_latent(),
                ks.len()
            )));
        }
        let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xddc0_ddc0);
        let encoders = ks
            .iter()
            .enumerate()
            .map(|(l, &k)| make_basis(k, model.dim(l + 1), &mut init_rng).map(Encoder::Sigmoid))
            .collect::<Result<Vec<_>>>()?;
        let net =
            RecognitionNet::new(ddc.hidden, model.dim(0), ks, ddc.hidden_bias, &mut init_rng)?;
        Self::new(model, net, encoders, config)
    }

    fn frozen_mask(&self) -> Vec<bool> {
        (0..self.model.num_blocks())
            .map(|l| self.config.freeze.contains(&l))
            .collect()
    }

    /// Sleep phase: fresh ancestral batch, then refit φ, α and β.
    pub fn sleep(&mut self) -> Result<(Vec<f64>, Vec<f64>)> {
        let batch = sleep_sample(
            &self.model,
            &self.encoders,
            self.config.sleep_samples,
            &mut self.rng,
        )?;
        let opts = ApproxOptions {
            ridge_per_sample: self.config.ridge,
            beta_mode: self.config.beta_mode,
            fit_mode: self.config.fit_mode,
            frozen: self.frozen_mask(),
        };
        let version = self.sleep_version + 1;
        let out = sleep_phase(
            &self.model,
            &self.net,
            &batch,
            &opts,
            version,
            self.approx.as_ref(),
        )?;
        self.net = out.net;
        let approx_res = out.approx.residuals.clone();
        self.approx = Some(out.approx);
        self.sleep_version = version;
        Ok((out.recognition_residuals, approx_res))
    }

    /// Wake gradient on a minibatch with freezing applied.
    pub fn wake_gradient(&self, xs: &DMatrix<f64>) -> Result<GradientSet> {
        let approx = self
            .approx
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("wake phase before any sleep phase".into()))?;
        let mut grads = wake_gradients(&self.model, &self.net, approx, xs, self.sleep_version)?;
        for l in &self.config.freeze {
            if let Some(b) = grads.blocks.get_mut(*l) {
                *b = None;
            }
        }
        if self.config.freeze_observation_noise {
            let cond = &self.model.conditionals[0];
            if let (Link::GaussianLinearMean, Some(g)) = (cond.link, grads.blocks[0].as_mut()) {
                let start = cond.child_dim() * cond.parent_dim;
                g[start..].iter_mut().for_each(|v| *v = 0.0);
            }
        }
        Ok(grads)
    }

    pub fn apply(&mut self, grads: &GradientSet) -> Result<()> {
        let cfg = self.config.adam();
        let top = self.model.num_latent();
        let mut blocks: Vec<&mut [f64]> = Vec::with_capacity(top + 1);
        let (conds, prior) = (&mut self.model.conditionals, &mut self.model.prior);
        for c in conds.iter_mut() {
            blocks.push(c.theta.as_mut_slice());
        }
        blocks.push(match prior {
            crate::models::Prior::Learnable { theta, .. } => theta.as_mut_slice(),
            crate::models::Prior::Fixed(_) => &mut [],
        });
        adam_step(&mut blocks, grads, &mut self.adam, &cfg)
    }

    /// One pass over `data` (rows are observations) in shuffled minibatches.
    pub fn run_epoch(&mut self, data: &DMatrix<f64>) -> Result<EpochRecord> {
        let (recognition_residuals, mut approx_residuals) = self.sleep()?;
        let mut order: Vec<usize> = (0..data.nrows()).collect();
        order.shuffle(&mut self.rng);
        let mut norm_sums = vec![0.0; self.model.num_blocks()];
        let mut steps = 0usize;
        for (b, chunk) in order.chunks(self.config.minibatch).enumerate() {
            if b > 0
                && self.config.sleep_every_n_batches > 0
                && b % self.config.sleep_every_n_batches == 0
            {
                approx_residuals = self.sleep()?.1;
            }
            let xs = data.select_rows(chunk.iter());
            let grads = self.wake_gradient(&xs)?;
            for (acc, n) in norm_sums.iter_mut().zip(grads.block_norms()) {
                *acc += n;
            }
            self.apply(&grads)?;
            if !self.model.all_params_finite() {
                return Err(Error::NonFinite(format!(
                    "parameters after step {b} of epoch {}",
                    self.epoch
                )));
            }
            steps += 1;
        }
        let epoch = self.epoch;
        self.epoch += 1;
        Ok(EpochRecord {
            epoch,
            grad_norms: norm_sums.iter().map(|s| s / steps.max(1) as f64).collect(),
            recognition_residuals,
            approx_residuals,
            mmd: None,
        })
    }

    /// Runs `epochs` epochs. `monitor` is called after each epoch and may
    /// return an MMD value to record. Non-finite gradients or parameters stop
    /// training and restore the state from the start of the failing epoch.
    pub fn train<F>(
        &mut self,
        data: &DMatrix<f64>,
        epochs: usize,
        mut monitor: F,
    ) -> Result<DiagnosticsTrace>
    where
        F: FnMut(&Trainer) -> Option<f64>,
    {
        if data.nrows() == 0 {
            return Err(Error::InvalidArgument("training data is empty".into()));
        }
        let mut trace = DiagnosticsTrace::default();
        for _ in 0..epochs {
            let last_good = self.clone();
            match self.run_epoch(data) {
                Ok(mut rec) => {
                    rec.mmd = monitor(self);
                    trace.epochs.push(rec);
                }
                Err(e @ Error::NonFinite(_)) => {
                    *self = last_good;
                    trace.halted = Some(e.to_string());
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        Ok(trace)
    }
}

/// Builds a trainer with random DDC machinery and trains for `config.epochs`.
pub fn train(
    model: GenerativeModel,
    data: &DMatrix<f64>,
    ddc: &DdcConfig,
    config: TrainConfig,
) -> Result<(GenerativeModel, DiagnosticsTrace)> {
    let epochs = config.epochs;
    let mut trainer = Trainer::with_random_ddc(model, ddc, config)?;
    let trace = trainer.train(data, epochs, |_| None)?;
    Ok((trainer.model, trace))
}
