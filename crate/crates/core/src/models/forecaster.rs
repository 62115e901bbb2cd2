//! GRU-attention forecaster of the next normalized current value(s).

use laserpm_nn::{
    seeded_rng, Attention, AttentionCache, Dense, DenseCache, Gru, GruCache, Loss, ModelBundle,
    Parameterized, SeededRng, Tensor,
};
use laserpm_nn::Activation;
use serde::{Deserialize, Serialize};

use super::{bundle_config, expect_model_type, fit, prefixed, to_steps, Affine, TrainConfig, TrainReport, Trainable};
use crate::datagen::ForecastSample;
use crate::error::{Error, Result};

pub const MODEL_TYPE: &str = "forecaster";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForecasterConfig {
    pub window: usize,
    pub horizon: usize,
    pub hidden1: usize,
    pub hidden2: usize,
}

impl Default for ForecasterConfig {
    fn default() -> Self {
        Self {
            window: 9,
            horizon: 1,
            hidden1: 64,
            hidden2: 32,
        }
    }
}

impl ForecasterConfig {
    pub fn with_horizon(horizon: usize) -> Self {
        Self {
            horizon,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Meta {
    config: ForecasterConfig,
    scale: Affine,
    train: Option<TrainConfig>,
}

#[derive(Debug, Clone)]
pub struct Forecaster {
    pub config: ForecasterConfig,
    scale: Affine,
    gru1: Gru,
    gru2: Gru,
    attention: Attention,
    head: Dense,
    seed: u64,
    train: Option<TrainConfig>,
    trained: bool,
}

struct Cache {
    c1: GruCache,
    c2: GruCache,
    ca: AttentionCache,
    ch: DenseCache,
}

impl Forecaster {
    pub fn new(config: ForecasterConfig, seed: u64) -> Result<Self> {
        if config.window < 2 || !(1..=2).contains(&config.horizon) {
            return Err(Error::Argument(format!(
                "forecaster needs window >= 2 and horizon 1 or 2, got {config:?}"
            )));
        }
        let mut rng = seeded_rng(seed);
        Ok(Self {
            config,
            scale: Affine::default(),
            gru1: Gru::new(1, config.hidden1, &mut rng),
            gru2: Gru::new(config.hidden1, config.hidden2, &mut rng),
            attention: Attention::new(config.hidden2, &mut rng),
            head: Dense::new(config.hidden2, config.horizon, Activation::None, &mut rng),
            seed,
            train: None,
            trained: false,
        })
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    fn check_sample(&self, s: &ForecastSample) -> Result<()> {
        if s.inputs.len() != self.config.window || s.targets.len() != self.config.horizon {
            return Err(Error::Shape(format!(
                "forecaster expects {} inputs and {} targets, got {} and {}",
                self.config.window,
                self.config.horizon,
                s.inputs.len(),
                s.targets.len()
            )));
        }
        Ok(())
    }

    fn forward(&self, windows: &[&[f64]]) -> Result<(Tensor, Cache)> {
        let xs = to_steps(windows.iter().copied(), self.scale);
        let batch = windows.len();
        let (hs1, c1) = self.gru1.forward(&xs, &Tensor::zeros(&[batch, self.config.hidden1]))?;
        let (hs2, c2) = self.gru2.forward(&hs1, &Tensor::zeros(&[batch, self.config.hidden2]))?;
        let (context, _, ca) = self.attention.forward(&hs2)?;
        let (y, ch) = self.head.forward(&context)?;
        Ok((y, Cache { c1, c2, ca, ch }))
    }

    fn backward(&mut self, cache: &Cache, dy: &Tensor) -> Result<()> {
        let d_context = self.head.backward(&cache.ch, dy)?;
        let d_hs2 = self.attention.backward(&cache.ca, &d_context)?;
        let (d_hs1, _) = self.gru2.backward(&cache.c2, &d_hs2)?;
        self.gru1.backward(&cache.c1, &d_hs1)?;
        Ok(())
    }

    /// Trains on `(window → horizon)` pairs of normalized currents.
    pub fn train(&mut self, samples: &[ForecastSample], config: &TrainConfig) -> Result<TrainReport> {
        if samples.is_empty() {
            return Err(Error::Argument("forecaster training set is empty".into()));
        }
        for s in samples {
            self.check_sample(s)?;
        }
        self.scale = Affine::fit(samples.iter().flat_map(|s| s.inputs.iter().chain(&s.targets)));
        let report = fit(self, samples, config)?;
        self.train = Some(*config);
        self.trained = true;
        Ok(report)
    }

    /// Predicts the next `horizon` values after each window.
    pub fn predict_batch(&self, windows: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        if !self.trained {
            return Err(Error::State("forecaster has not been trained or loaded".into()));
        }
        if let Some(w) = windows.iter().find(|w| w.len() != self.config.window) {
            return Err(Error::Shape(format!(
                "forecaster expects windows of {}, got {}",
                self.config.window,
                w.len()
            )));
        }
        if windows.is_empty() {
            return Ok(Vec::new());
        }
        let (y, _) = self.forward(windows)?;
        Ok(y
            .data()
            .chunks(self.config.horizon)
            .map(|row| row.iter().map(|v| self.scale.invert(*v)).collect())
            .collect())
    }

    pub fn predict(&self, window: &[f64]) -> Result<Vec<f64>> {
        Ok(self.predict_batch(&[window])?.remove(0))
    }

    /// Multi-step forecast that feeds each one-step prediction back into the window.
    pub fn predict_recursive_batch(&self, windows: &[&[f64]], steps: usize) -> Result<Vec<Vec<f64>>> {
        let mut current: Vec<Vec<f64>> = windows.iter().map(|w| w.to_vec()).collect();
        let mut out = vec![Vec::with_capacity(steps); windows.len()];
        for _ in 0..steps {
            let refs: Vec<&[f64]> = current.iter().map(Vec::as_slice).collect();
            let preds = self.predict_batch(&refs)?;
            for ((w, o), p) in current.iter_mut().zip(&mut out).zip(preds) {
                w.remove(0);
                w.push(p[0]);
                o.push(p[0]);
            }
        }
        Ok(out)
    }

    pub fn predict_recursive(&self, window: &[f64], steps: usize) -> Result<Vec<f64>> {
        Ok(self.predict_recursive_batch(&[window], steps)?.remove(0))
    }

    pub fn to_bundle(&self) -> Result<ModelBundle> {
        let mut b = ModelBundle::new(MODEL_TYPE, self.seed);
        b.layer_specs = vec![
            serde_json::to_value(self.gru1.spec())?,
            serde_json::to_value(self.gru2.spec())?,
            serde_json::to_value(self.attention.spec())?,
            serde_json::to_value(self.head.spec())?,
        ];
        b.export("gru1", &self.gru1);
        b.export("gru2", &self.gru2);
        b.export("attention", &self.attention);
        b.export("head", &self.head);
        b.train_config = serde_json::to_value(Meta {
            config: self.config,
            scale: self.scale,
            train: self.train,
        })?;
        Ok(b)
    }

    pub fn from_bundle(bundle: &ModelBundle) -> Result<Self> {
        expect_model_type(bundle, MODEL_TYPE)?;
        let meta: Meta = bundle_config(bundle)?;
        let mut m = Self::new(meta.config, bundle.rng_seed)?;
        bundle.import("gru1", &mut m.gru1)?;
        bundle.import("gru2", &mut m.gru2)?;
        bundle.import("attention", &mut m.attention)?;
        bundle.import("head", &mut m.head)?;
        m.scale = meta.scale;
        m.train = meta.train;
        m.trained = true;
        Ok(m)
    }
}

impl Parameterized for Forecaster {
    fn parameters(&self) -> Vec<(String, &Tensor)> {
        let mut p = prefixed("gru1", &self.gru1);
        p.extend(prefixed("gru2", &self.gru2));
        p.extend(prefixed("attention", &self.attention));
        p.extend(prefixed("head", &self.head));
        p
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.gru1.parameters_mut();
        p.extend(self.gru2.parameters_mut());
        p.extend(self.attention.parameters_mut());
        p.extend(self.head.parameters_mut());
        p
    }
}

fn scaled_targets(model: &Forecaster, batch: &[&ForecastSample]) -> Tensor {
    let data = batch
        .iter()
        .flat_map(|s| s.targets.iter().map(|t| model.scale.apply(*t)))
        .collect();
    Tensor::new(vec![batch.len(), model.config.horizon], data).expect("checked sample shapes")
}

impl Trainable for Forecaster {
    type Sample = ForecastSample;

    fn accumulate(&mut self, batch: &[&ForecastSample], _rng: &mut SeededRng) -> Result<f64> {
        let windows: Vec<&[f64]> = batch.iter().map(|s| s.inputs.as_slice()).collect();
        let (y, cache) = self.forward(&windows)?;
        let target = scaled_targets(self, batch);
        let l = Loss::Mse.value(&y, &target)?;
        self.backward(&cache, &Loss::Mse.gradient(&y, &target)?)?;
        Ok(l)
    }

    fn evaluate(&self, samples: &[&ForecastSample]) -> Result<f64> {
        let windows: Vec<&[f64]> = samples.iter().map(|s| s.inputs.as_slice()).collect();
        let (y, _) = self.forward(&windows)?;
        Ok(Loss::Mse.value(&y, &scaled_targets(self, samples))?)
    }
}
