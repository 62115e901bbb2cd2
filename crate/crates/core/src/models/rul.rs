//! RUL regressor fusing a GRU-attention sequence branch with statistical features.

use laserpm_nn::{
    dropout_forward, seeded_rng, Activation, Attention, AttentionCache, Dense, DenseCache,
    DropoutMask, Gru, GruCache, Loss, ModelBundle, Parameterized, SeededRng, Tensor,
};
use serde::{Deserialize, Serialize};

use super::{bundle_config, expect_model_type, fit, prefixed, to_steps, Affine, TrainConfig, TrainReport, Trainable};
use crate::datagen::{RulSample, StatFeatures};
use crate::error::{Error, Result};

pub const MODEL_TYPE: &str = "rul";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RulConfig {
    pub window: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    pub stat_units: usize,
    pub fusion_units: usize,
    pub dropout: f64,
    pub use_attention: bool,
    pub use_stats: bool,
}

impl Default for RulConfig {
    fn default() -> Self {
        Self {
            window: 10,
            hidden1: 64,
            hidden2: 32,
            stat_units: 32,
            fusion_units: 32,
            dropout: 0.2,
            use_attention: true,
            use_stats: true,
        }
    }
}

impl RulConfig {
    /// Sequence branch only, pooled by the last hidden state.
    pub fn plain_gru() -> Self {
        Self {
            use_attention: false,
            use_stats: false,
            ..Self::default()
        }
    }

    pub fn attention_only() -> Self {
        Self {
            use_stats: false,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Meta {
    config: RulConfig,
    seq_scale: Affine,
    stat_scale: [Affine; 3],
    label_scale: Affine,
    train: Option<TrainConfig>,
}

#[derive(Debug, Clone)]
pub struct RulModel {
    pub config: RulConfig,
    gru1: Gru,
    gru2: Gru,
    attention: Attention,
    stat_branch: Dense,
    fusion: Dense,
    head: Dense,
    seq_scale: Affine,
    stat_scale: [Affine; 3],
    label_scale: Affine,
    seed: u64,
    train: Option<TrainConfig>,
    trained: bool,
}

struct Cache {
    c1: GruCache,
    c2: GruCache,
    ca: Option<AttentionCache>,
    steps: usize,
    cs: Option<DenseCache>,
    cf: DenseCache,
    mask: Option<DropoutMask>,
    ch: DenseCache,
}

fn concat_cols(a: &Tensor, b: &Tensor) -> Tensor {
    let (batch, p, q) = (a.dim(0), a.dim(1), b.dim(1));
    let mut data = Vec::with_capacity(batch * (p + q));
    for i in 0..batch {
        data.extend_from_slice(a.row(i));
        data.extend_from_slice(b.row(i));
    }
    Tensor::new(vec![batch, p + q], data).expect("row lengths add up")
}

fn split_cols(x: &Tensor, p: usize) -> (Tensor, Tensor) {
    let (batch, n) = (x.dim(0), x.dim(1));
    let mut a = Vec::with_capacity(batch * p);
    let mut b = Vec::with_capacity(batch * (n - p));
    for i in 0..batch {
        a.extend_from_slice(&x.row(i)[..p]);
        b.extend_from_slice(&x.row(i)[p..]);
    }
    (
        Tensor::new(vec![batch, p], a).expect("split sizes"),
        Tensor::new(vec![batch, n - p], b).expect("split sizes"),
    )
}

impl RulModel {
    pub fn new(config: RulConfig, seed: u64) -> Result<Self> {
        if config.window < 2 {
            return Err(Error::Argument("RUL window must be at least 2".into()));
        }
        if !(0.0..1.0).contains(&config.dropout) {
            return Err(Error::Argument("dropout rate must lie in [0, 1)".into()));
        }
        let mut rng = seeded_rng(seed);
        let fused = config.hidden2 + if config.use_stats { config.stat_units } else { 0 };
        Ok(Self {
            config,
            gru1: Gru::new(1, config.hidden1, &mut rng),
            gru2: Gru::new(config.hidden1, config.hidden2, &mut rng),
            attention: Attention::new(config.hidden2, &mut rng),
            stat_branch: Dense::new(3, config.stat_units, Activation::Relu, &mut rng),
            fusion: Dense::new(fused, config.fusion_units, Activation::Relu, &mut rng),
            head: Dense::new(config.fusion_units, 1, Activation::None, &mut rng),
            seq_scale: Affine::default(),
            stat_scale: [Affine::default(); 3],
            label_scale: Affine::default(),
            seed,
            train: None,
            trained: false,
        })
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    fn stats_tensor(&self, stats: &[&StatFeatures]) -> Tensor {
        let data = stats
            .iter()
            .flat_map(|s| {
                let a = s.as_array();
                (0..3).map(move |k| (k, a[k]))
            })
            .map(|(k, v)| self.stat_scale[k].apply(v))
            .collect();
        Tensor::new(vec![stats.len(), 3], data).expect("three features per row")
    }

    fn forward(
        &self,
        seqs: &[&[f64]],
        stats: &[&StatFeatures],
        rng: Option<&mut SeededRng>,
    ) -> Result<(Tensor, Cache)> {
        if let Some(s) = seqs.iter().find(|s| s.len() != self.config.window) {
            return Err(Error::Shape(format!(
                "RUL model expects windows of {}, got {}",
                self.config.window,
                s.len()
            )));
        }
        let batch = seqs.len();
        let xs = to_steps(seqs.iter().copied(), self.seq_scale);
        let (hs1, c1) = self.gru1.forward(&xs, &Tensor::zeros(&[batch, self.config.hidden1]))?;
        let (hs2, c2) = self.gru2.forward(&hs1, &Tensor::zeros(&[batch, self.config.hidden2]))?;
        let (pooled, ca) = if self.config.use_attention {
            let (c, _, cache) = self.attention.forward(&hs2)?;
            (c, Some(cache))
        } else {
            (hs2[hs2.len() - 1].clone(), None)
        };
        let (fused_in, cs) = if self.config.use_stats {
            let (s, cache) = self.stat_branch.forward(&self.stats_tensor(stats))?;
            (concat_cols(&pooled, &s), Some(cache))
        } else {
            (pooled, None)
        };
        let (f, cf) = self.fusion.forward(&fused_in)?;
        let (f, mask) = match rng {
            Some(rng) => dropout_forward(&f, self.config.dropout, true, rng)?,
            None => (f, None),
        };
        let (y, ch) = self.head.forward(&f)?;
        Ok((
            y,
            Cache {
                c1,
                c2,
                ca,
                steps: hs2.len(),
                cs,
                cf,
                mask,
                ch,
            },
        ))
    }

    fn backward(&mut self, cache: &Cache, dy: &Tensor) -> Result<()> {
        let mut d = self.head.backward(&cache.ch, dy)?;
        if let Some(mask) = &cache.mask {
            d = mask.backward(&d)?;
        }
        let d_fused = self.fusion.backward(&cache.cf, &d)?;
        let d_pooled = match &cache.cs {
            Some(cs) => {
                let (dp, ds) = split_cols(&d_fused, self.config.hidden2);
                self.stat_branch.backward(cs, &ds)?;
                dp
            }
            None => d_fused,
        };
        let d_hs2 = match &cache.ca {
            Some(ca) => self.attention.backward(ca, &d_pooled)?,
            None => {
                let mut v = vec![Tensor::zeros(d_pooled.shape()); cache.steps];
                v[cache.steps - 1] = d_pooled;
                v
            }
        };
        let (d_hs1, _) = self.gru2.backward(&cache.c2, &d_hs2)?;
        self.gru1.backward(&cache.c1, &d_hs1)?;
        Ok(())
    }

    pub fn train(&mut self, samples: &[RulSample], config: &TrainConfig) -> Result<TrainReport> {
        if samples.is_empty() {
            return Err(Error::Argument("RUL training set is empty".into()));
        }
        if let Some(s) = samples.iter().find(|s| !(s.rul_h >= 0.0 && s.rul_h.is_finite())) {
            return Err(Error::Data(format!(
                "negative or non-finite RUL label {} for {}",
                s.rul_h, s.device_id
            )));
        }
        if let Some(s) = samples.iter().find(|s| s.values.len() != self.config.window) {
            return Err(Error::Shape(format!(
                "RUL model expects windows of {}, got {}",
                self.config.window,
                s.values.len()
            )));
        }
        self.seq_scale = Affine::fit(samples.iter().flat_map(|s| &s.values));
        for k in 0..3 {
            let col: Vec<f64> = samples.iter().map(|s| s.stats.as_array()[k]).collect();
            self.stat_scale[k] = Affine::fit(&col);
        }
        self.label_scale = Affine::fit(samples.iter().map(|s| &s.rul_h));
        let report = fit(self, samples, config)?;
        self.train = Some(*config);
        self.trained = true;
        Ok(report)
    }

    /// Predicted RUL in hours, clamped at zero.
    pub fn predict_batch(&self, seqs: &[&[f64]], stats: &[&StatFeatures]) -> Result<Vec<f64>> {
        if !self.trained {
            return Err(Error::State("RUL model has not been trained or loaded".into()));
        }
        if seqs.len() != stats.len() {
            return Err(Error::Shape("sequence and feature counts differ".into()));
        }
        if seqs.is_empty() {
            return Ok(Vec::new());
        }
        let (y, _) = self.forward(seqs, stats, None)?;
        Ok(y.data().iter().map(|v| self.label_scale.invert(*v).max(0.0)).collect())
    }

    pub fn predict(&self, seq: &[f64], stats: &StatFeatures) -> Result<f64> {
        Ok(self.predict_batch(&[seq], &[stats])?[0])
    }

    pub fn to_bundle(&self) -> Result<ModelBundle> {
        let mut b = ModelBundle::new(MODEL_TYPE, self.seed);
        b.layer_specs = vec![
            serde_json::to_value(self.gru1.spec())?,
            serde_json::to_value(self.gru2.spec())?,
            serde_json::to_value(self.attention.spec())?,
            serde_json::to_value(self.stat_branch.spec())?,
            serde_json::to_value(self.fusion.spec())?,
            serde_json::to_value(self.head.spec())?,
        ];
        for (name, t) in self.parameters() {
            b.insert_tensor(name, t);
        }
        b.train_config = serde_json::to_value(Meta {
            config: self.config,
            seq_scale: self.seq_scale,
            stat_scale: self.stat_scale,
            label_scale: self.label_scale,
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
        bundle.import("fusion", &mut m.fusion)?;
        bundle.import("head", &mut m.head)?;
        if m.config.use_attention {
            bundle.import("attention", &mut m.attention)?;
        }
        if m.config.use_stats {
            bundle.import("stat_branch", &mut m.stat_branch)?;
        }
        m.seq_scale = meta.seq_scale;
        m.stat_scale = meta.stat_scale;
        m.label_scale = meta.label_scale;
        m.train = meta.train;
        m.trained = true;
        Ok(m)
    }
}

impl Parameterized for RulModel {
    fn parameters(&self) -> Vec<(String, &Tensor)> {
        let mut p = prefixed("gru1", &self.gru1);
        p.extend(prefixed("gru2", &self.gru2));
        if self.config.use_attention {
            p.extend(prefixed("attention", &self.attention));
        }
        if self.config.use_stats {
            p.extend(prefixed("stat_branch", &self.stat_branch));
        }
        p.extend(prefixed("fusion", &self.fusion));
        p.extend(prefixed("head", &self.head));
        p
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.gru1.parameters_mut();
        p.extend(self.gru2.parameters_mut());
        if self.config.use_attention {
            p.extend(self.attention.parameters_mut());
        }
        if self.config.use_stats {
            p.extend(self.stat_branch.parameters_mut());
        }
        p.extend(self.fusion.parameters_mut());
        p.extend(self.head.parameters_mut());
        p
    }
}

fn batch_views<'a>(batch: &[&'a RulSample]) -> (Vec<&'a [f64]>, Vec<&'a StatFeatures>) {
    (
        batch.iter().map(|s| s.values.as_slice()).collect(),
        batch.iter().map(|s| &s.stats).collect(),
    )
}

impl RulModel {
    fn scaled_labels(&self, batch: &[&RulSample]) -> Tensor {
        let data = batch.iter().map(|s| self.label_scale.apply(s.rul_h)).collect();
        Tensor::new(vec![batch.len(), 1], data).expect("one label per row")
    }
}

impl Trainable for RulModel {
    type Sample = RulSample;

    fn accumulate(&mut self, batch: &[&RulSample], rng: &mut SeededRng) -> Result<f64> {
        let (seqs, stats) = batch_views(batch);
        let (y, cache) = self.forward(&seqs, &stats, Some(rng))?;
        let target = self.scaled_labels(batch);
        let l = Loss::Mse.value(&y, &target)?;
        self.backward(&cache, &Loss::Mse.gradient(&y, &target)?)?;
        Ok(l)
    }

    fn evaluate(&self, samples: &[&RulSample]) -> Result<f64> {
        let (seqs, stats) = batch_views(samples);
        let (y, _) = self.forward(&seqs, &stats, None)?;
        Ok(Loss::Mse.value(&y, &self.scaled_labels(samples))?)
    }
}
