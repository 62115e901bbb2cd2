//! Forecaster, autoencoder detector, RUL regressor and GAN built on `laserpm-nn`,
//! with a shared mini-batch training loop.

pub mod autoencoder;
pub mod forecaster;
pub mod gan;
pub mod rul;

use std::fmt::Write as _;

use laserpm_nn::{seeded_rng, Adam, Parameterized, SeededRng, Tensor};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use autoencoder::{classify, AnomalyVerdict, Autoencoder};
pub use forecaster::Forecaster;
pub use gan::{Gan, GanConfig, GanReport};
pub use rul::{RulConfig, RulModel};

/// `y = (x - shift) / scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub shift: f64,
    pub scale: f64,
}

impl Default for Affine {
    fn default() -> Self {
        Self {
            shift: 0.0,
            scale: 1.0,
        }
    }
}

impl Affine {
    /// Standardizes to zero mean and unit variance over `values`.
    pub fn fit<'a>(values: impl IntoIterator<Item = &'a f64>) -> Self {
        let xs: Vec<f64> = values.into_iter().copied().collect();
        let (mean, std) = crate::metrics::mean_std(&xs);
        Self {
            shift: mean,
            scale: if std > 1e-12 { std } else { 1.0 },
        }
    }

    /// Maps the observed `[min, max]` onto `[-1, 1]`.
    pub fn min_max<'a>(values: impl IntoIterator<Item = &'a f64>) -> Self {
        let (lo, hi) = values
            .into_iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
        let half = (hi - lo) / 2.0;
        Self {
            shift: lo + half,
            scale: if half > 1e-12 { half } else { 1.0 },
        }
    }

    pub fn apply(&self, x: f64) -> f64 {
        (x - self.shift) / self.scale
    }

    pub fn invert(&self, y: f64) -> f64 {
        y * self.scale + self.shift
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Epochs without validation improvement before stopping; 0 disables early stopping.
    pub patience: usize,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            batch_size: 32,
            epochs: 300,
            patience: 30,
            val_fraction: 0.1,
            seed: 7,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch size and epochs must be positive".into()));
        }
        if !(0.0..0.9).contains(&self.val_fraction) {
            return Err(Error::Config("validation fraction must lie in [0, 0.9)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub history: Vec<EpochLoss>,
    /// Epoch whose parameters were kept (lowest validation loss, or the last epoch).
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainReport {
    pub fn loss_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss\n");
        for e in &self.history {
            let val = e.val_loss.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{},{}", e.epoch, e.train_loss, val);
        }
        out
    }
}

/// A model trained by minimizing a mean loss over mini-batches.
pub(crate) trait Trainable: Parameterized + Clone {
    type Sample;

    /// Forward and backward pass over `batch`; accumulates gradients, returns the loss.
    fn accumulate(&mut self, batch: &[&Self::Sample], rng: &mut SeededRng) -> Result<f64>;

    /// Mean loss over `samples` in inference mode.
    fn evaluate(&self, samples: &[&Self::Sample]) -> Result<f64>;
}

pub(crate) fn fit<M: Trainable>(
    model: &mut M,
    samples: &[M::Sample],
    config: &TrainConfig,
) -> Result<TrainReport> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::Argument("empty training set".into()));
    }
    let mut rng = seeded_rng(config.seed ^ 0x5_eed0_ff17);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut rng);
    let n_val = if samples.len() >= 10 {
        (samples.len() as f64 * config.val_fraction).floor() as usize
    } else {
        0
    };
    let val: Vec<&M::Sample> = order[..n_val].iter().map(|&i| &samples[i]).collect();
    let mut train_idx = order[n_val..].to_vec();

    let mut adam = Adam::new(config.lr);
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, M)> = None;
    let mut stopped_early = false;
    for epoch in 1..=config.epochs {
        train_idx.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in train_idx.chunks(config.batch_size) {
            let batch: Vec<&M::Sample> = chunk.iter().map(|&i| &samples[i]).collect();
            model.zero_grad();
            let l = model.accumulate(&batch, &mut rng)?;
            if !l.is_finite() {
                return Err(Error::Nn(laserpm_nn::NnError::Numeric(format!(
                    "training loss diverged at epoch {epoch}"
                ))));
            }
            total += l * chunk.len() as f64;
            adam.step(&mut model.parameters_mut())?;
        }
        let train_loss = total / train_idx.len() as f64;
        let val_loss = if val.is_empty() {
            None
        } else {
            Some(model.evaluate(&val)?)
        };
        history.push(EpochLoss {
            epoch,
            train_loss,
            val_loss,
        });
        if let Some(v) = val_loss {
            if best.as_ref().is_none_or(|(b, _, _)| v < *b) {
                best = Some((v, epoch, model.clone()));
            } else if config.patience > 0
                && epoch - best.as_ref().map_or(0, |b| b.1) >= config.patience
            {
                stopped_early = true;
                break;
            }
        }
    }
    let best_epoch = match best {
        Some((_, epoch, snapshot)) => {
            *model = snapshot;
            epoch
        }
        None => history.len(),
    };
    model.zero_grad();
    for p in model.parameters_mut() {
        p.clear_grad();
    }
    Ok(TrainReport {
        history,
        best_epoch,
        stopped_early,
    })
}

/// Splits `[batch][steps]` values into `steps` tensors of shape `[batch, 1]`.
pub(crate) fn to_steps<'a>(rows: impl ExactSizeIterator<Item = &'a [f64]> + Clone, affine: Affine) -> Vec<Tensor> {
    let batch = rows.len();
    let steps = rows.clone().next().map_or(0, <[f64]>::len);
    (0..steps)
        .map(|t| {
            let col = rows.clone().map(|r| affine.apply(r[t])).collect();
            Tensor::new(vec![batch, 1], col).expect("column length equals batch")
        })
        .collect()
}

pub(crate) fn prefixed<'a>(prefix: &str, module: &'a impl Parameterized) -> Vec<(String, &'a Tensor)> {
    module
        .parameters()
        .into_iter()
        .map(|(n, t)| (format!("{prefix}.{n}"), t))
        .collect()
}

pub(crate) fn expect_model_type(bundle: &laserpm_nn::ModelBundle, expected: &str) -> Result<()> {
    if bundle.model_type != expected {
        return Err(Error::Config(format!(
            "bundle holds a `{}` model, expected `{expected}`",
            bundle.model_type
        )));
    }
    Ok(())
}

pub(crate) fn bundle_config<T: serde::de::DeserializeOwned>(bundle: &laserpm_nn::ModelBundle) -> Result<T> {
    serde_json::from_value(bundle.train_config.clone())
        .map_err(|e| Error::Config(format!("bundle `{}` has invalid config: {e}", bundle.model_type)))
}
