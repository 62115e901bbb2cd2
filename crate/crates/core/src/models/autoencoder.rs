//! Convolutional autoencoder whose reconstruction MAE is the anomaly score.

use laserpm_nn::{
    seeded_rng, Activation, Conv1d, Conv1dCache, Conv1dSpec, Loss, ModelBundle, Parameterized,
    SeededRng, Tensor,
};
use serde::{Deserialize, Serialize};

use super::{bundle_config, expect_model_type, fit, prefixed, Affine, TrainConfig, TrainReport, Trainable};
use crate::datagen::DetectSample;
use crate::error::{Error, Result};

pub const MODEL_TYPE: &str = "autoencoder";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnomalyVerdict {
    pub score: f64,
    pub threshold: f64,
    pub is_anomalous: bool,
}

impl AnomalyVerdict {
    pub fn new(score: f64, threshold: f64) -> Self {
        Self {
            score,
            threshold,
            is_anomalous: score > threshold,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AutoencoderConfig {
    pub window: usize,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        Self { window: 10 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Meta {
    config: AutoencoderConfig,
    scale: Affine,
    threshold: Option<f64>,
    train: Option<TrainConfig>,
}

fn layer_specs(window: usize) -> Vec<Conv1dSpec> {
    let conv = |i, o, stride, transposed, kernel_len, activation| Conv1dSpec {
        in_channels: i,
        out_channels: o,
        kernel_len,
        stride,
        padding: 1,
        transposed,
        activation,
    };
    // Even windows need a 4-tap upsampler to double the encoded length back exactly.
    let up_kernel = if window.is_multiple_of(2) { 4 } else { 3 };
    vec![
        conv(1, 32, 2, false, 3, Activation::Relu),
        conv(32, 16, 1, false, 3, Activation::Relu),
        conv(16, 32, 1, false, 3, Activation::Relu),
        conv(32, 32, 2, true, up_kernel, Activation::Relu),
        conv(32, 16, 1, true, 3, Activation::Relu),
        conv(16, 32, 1, true, 3, Activation::Relu),
        conv(32, 1, 1, true, 3, Activation::None),
    ]
}

#[derive(Debug, Clone)]
pub struct Autoencoder {
    pub config: AutoencoderConfig,
    layers: Vec<Conv1d>,
    scale: Affine,
    pub threshold: Option<f64>,
    seed: u64,
    train: Option<TrainConfig>,
    trained: bool,
}

impl Autoencoder {
    pub fn new(config: AutoencoderConfig, seed: u64) -> Result<Self> {
        if config.window < 3 {
            return Err(Error::Argument("autoencoder window must be at least 3".into()));
        }
        let mut rng = seeded_rng(seed);
        let layers = layer_specs(config.window)
            .into_iter()
            .map(|s| Conv1d::new(s, &mut rng))
            .collect::<laserpm_nn::Result<Vec<_>>>()?;
        let model = Self {
            config,
            layers,
            scale: Affine::default(),
            threshold: None,
            seed,
            train: None,
            trained: false,
        };
        let out = model.layers.iter().try_fold(config.window, |len, l| l.output_len(len));
        if out != Some(config.window) {
            return Err(Error::Argument(format!(
                "autoencoder cannot reproduce window length {}",
                config.window
            )));
        }
        Ok(model)
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    fn input(&self, windows: &[&[f64]]) -> Result<Tensor> {
        let len = self.config.window;
        if let Some(w) = windows.iter().find(|w| w.len() != len) {
            return Err(Error::Shape(format!(
                "autoencoder expects windows of {len}, got {}",
                w.len()
            )));
        }
        let data = windows
            .iter()
            .flat_map(|w| w.iter().map(|v| self.scale.apply(*v)))
            .collect();
        Ok(Tensor::new(vec![windows.len(), len, 1], data)?)
    }

    fn forward(&self, x: &Tensor) -> Result<(Tensor, Vec<Conv1dCache>)> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for layer in &self.layers {
            let (y, c) = layer.forward(&h)?;
            caches.push(c);
            h = y;
        }
        Ok((h, caches))
    }

    fn infer(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for layer in &self.layers {
            h = layer.infer(&h)?;
        }
        Ok(h)
    }

    fn ensure_trained(&self) -> Result<()> {
        if self.trained {
            Ok(())
        } else {
            Err(Error::State("autoencoder has not been trained or loaded".into()))
        }
    }

    /// Trains on windows of normal devices; any anomalous window is rejected.
    pub fn train(&mut self, samples: &[DetectSample], config: &TrainConfig) -> Result<TrainReport> {
        if let Some(s) = samples.iter().find(|s| s.anomalous) {
            return Err(Error::Data(format!(
                "detector training set contains an anomalous window from {}",
                s.device_id
            )));
        }
        if samples.is_empty() {
            return Err(Error::Argument("detector training set is empty".into()));
        }
        self.input(&samples.iter().map(|s| s.values.as_slice()).collect::<Vec<_>>())?;
        self.scale = Affine::fit(samples.iter().flat_map(|s| &s.values));
        let report = fit(self, samples, config)?;
        self.train = Some(*config);
        self.trained = true;
        Ok(report)
    }

    /// Reconstructions in normalized-current units.
    pub fn reconstruct_batch(&self, windows: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        self.ensure_trained()?;
        if windows.is_empty() {
            return Ok(Vec::new());
        }
        let y = self.infer(&self.input(windows)?)?;
        Ok(y
            .data()
            .chunks(self.config.window)
            .map(|r| r.iter().map(|v| self.scale.invert(*v)).collect())
            .collect())
    }

    /// Mean absolute reconstruction error of each window, in normalized-current units.
    pub fn score_batch(&self, windows: &[&[f64]]) -> Result<Vec<f64>> {
        let recon = self.reconstruct_batch(windows)?;
        windows
            .iter()
            .zip(&recon)
            .map(|(w, r)| crate::metrics::mae(w, r))
            .collect()
    }

    pub fn anomaly_score(&self, window: &[f64]) -> Result<f64> {
        Ok(self.score_batch(&[window])?[0])
    }

    pub fn to_bundle(&self) -> Result<ModelBundle> {
        let mut b = ModelBundle::new(MODEL_TYPE, self.seed);
        b.layer_specs = self
            .layers
            .iter()
            .map(|l| serde_json::to_value(l.spec()))
            .collect::<std::result::Result<_, _>>()?;
        for (i, l) in self.layers.iter().enumerate() {
            b.export(&format!("layer{i}"), l);
        }
        b.train_config = serde_json::to_value(Meta {
            config: self.config,
            scale: self.scale,
            threshold: self.threshold,
            train: self.train,
        })?;
        Ok(b)
    }

    pub fn from_bundle(bundle: &ModelBundle) -> Result<Self> {
        expect_model_type(bundle, MODEL_TYPE)?;
        let meta: Meta = bundle_config(bundle)?;
        let mut m = Self::new(meta.config, bundle.rng_seed)?;
        for (i, l) in m.layers.iter_mut().enumerate() {
            bundle.import(&format!("layer{i}"), l)?;
        }
        m.scale = meta.scale;
        m.threshold = meta.threshold;
        m.train = meta.train;
        m.trained = true;
        Ok(m)
    }
}

/// Scores `window` and compares it against `threshold` (strictly greater is anomalous).
pub fn classify(model: &Autoencoder, window: &[f64], threshold: f64) -> Result<AnomalyVerdict> {
    Ok(AnomalyVerdict::new(model.anomaly_score(window)?, threshold))
}

impl Parameterized for Autoencoder {
    fn parameters(&self) -> Vec<(String, &Tensor)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| prefixed(&format!("layer{i}"), l))
            .collect()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| l.parameters_mut()).collect()
    }
}

impl Trainable for Autoencoder {
    type Sample = DetectSample;

    fn accumulate(&mut self, batch: &[&DetectSample], _rng: &mut SeededRng) -> Result<f64> {
        let x = self.input(&batch.iter().map(|s| s.values.as_slice()).collect::<Vec<_>>())?;
        let (y, caches) = self.forward(&x)?;
        let l = Loss::Mse.value(&y, &x)?;
        let mut d = Loss::Mse.gradient(&y, &x)?;
        for (layer, cache) in self.layers.iter_mut().zip(&caches).rev() {
            d = layer.backward(cache, &d)?;
        }
        Ok(l)
    }

    fn evaluate(&self, samples: &[&DetectSample]) -> Result<f64> {
        let x = self.input(&samples.iter().map(|s| s.values.as_slice()).collect::<Vec<_>>())?;
        Ok(Loss::Mse.value(&self.infer(&x)?, &x)?)
    }
}
