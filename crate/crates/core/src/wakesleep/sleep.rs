use nalgebra::DMatrix;
use rand::Rng;

use crate::ddc::{fit_function_approx, ApproxOptions, Encoder, FunctionApprox, RecognitionNet};
use crate::error::{check_len, Error, Result};
use crate::models::GenerativeModel;

/// Joint ancestral samples with cached encodings.
///
/// `z[l - 1]` is `S × dim_l`; `t[l - 1]` is `S × K_l`. `x` is absent for
/// latent-only batches (e.g. an enumerated support used for exact fits), and
/// `weights` replaces uniform sample weights when present.
#[derive(Debug, Clone, PartialEq)]
pub struct SleepBatch {
    pub z: Vec<DMatrix<f64>>,
    pub x: Option<DMatrix<f64>>,
    pub t: Vec<DMatrix<f64>>,
    pub weights: Option<Vec<f64>>,
}

impl SleepBatch {
    pub fn len(&self) -> usize {
        self.z.first().map_or(0, |z| z.nrows())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Weighted latent-only batch over explicit joint states
    /// (`states[s][l - 1]` = `z_l`).
    pub fn from_states(
        model: &GenerativeModel,
        encoders: &[Encoder],
        states: &[Vec<Vec<f64>>],
        weights: Vec<f64>,
    ) -> Result<Self> {
        check_len("state weights", states.len(), weights.len())?;
        let top = model.num_latent();
        let z = (1..=top)
            .map(|l| {
                let d = model.dim(l);
                let flat: Vec<f64> = states.iter().flat_map(|s| s[l - 1].clone()).collect();
                DMatrix::from_row_slice(states.len(), d, &flat)
            })
            .collect();
        let mut batch = Self {
            z,
            x: None,
            t: Vec::new(),
            weights: Some(weights),
        };
        batch.encode(encoders)?;
        Ok(batch)
    }

    fn encode(&mut self, encoders: &[Encoder]) -> Result<()> {
        check_len("encoders", self.z.len(), encoders.len())?;
        self.t = self
            .z
            .iter()
            .zip(encoders)
            .map(|(z, e)| e.encode_rows(z))
            .collect::<Result<_>>()?;
        Ok(())
    }
}

/// Draws `s` ancestral samples `z_L → … → z_1 → x` and encodes every layer.
pub fn sleep_sample<R: Rng + ?Sized>(
    model: &GenerativeModel,
    encoders: &[Encoder],
    s: usize,
    rng: &mut R,
) -> Result<SleepBatch> {
    if s == 0 {
        return Err(Error::InvalidArgument(
            "sleep batch size must be >= 1".into(),
        ));
    }
    let top = model.num_latent();
    let mut z: Vec<Vec<f64>> = (1..=top)
        .map(|l| Vec::with_capacity(s * model.dim(l)))
        .collect();
    let mut x = Vec::with_capacity(s * model.dim(0));
    for _ in 0..s {
        let sample = model.sample(rng)?;
        for (acc, v) in z.iter_mut().zip(&sample.latents) {
            acc.extend_from_slice(v);
        }
        x.extend_from_slice(&sample.x);
    }
    let mut batch = SleepBatch {
        z: z.into_iter()
            .enumerate()
            .map(|(i, flat)| DMatrix::from_row_slice(s, model.dim(i + 1), &flat))
            .collect(),
        x: Some(DMatrix::from_row_slice(s, model.dim(0), &x)),
        t: Vec::new(),
        weights: None,
    };
    batch.encode(encoders)?;
    Ok(batch)
}

/// Result of one sleep phase.
#[derive(Debug, Clone)]
pub struct SleepOutcome {
    pub net: RecognitionNet,
    pub approx: FunctionApprox,
    pub recognition_residuals: Vec<f64>,
}

/// Refits the recognition readouts and then the gradient readouts on one
/// batch. `version` tags the readouts so the wake phase can refuse stale ones.
pub fn sleep_phase(
    model: &GenerativeModel,
    net: &RecognitionNet,
    batch: &SleepBatch,
    opts: &ApproxOptions,
    version: u64,
    previous: Option<&FunctionApprox>,
) -> Result<SleepOutcome> {
    let mut net = net.clone();
    let recognition_residuals = net.fit(batch, opts.ridge_per_sample, opts.fit_mode)?;
    let approx = fit_function_approx(model, batch, opts, version, previous)?;
    Ok(SleepOutcome {
        net,
        approx,
        recognition_residuals,
    })
}
