//! LSTM-convolutional generator and convolutional discriminator trained adversarially
//! with binary cross-entropy.

use std::fmt::Write as _;

use laserpm_nn::{
    seeded_rng, Activation, Adam, Conv1d, Conv1dCache, Conv1dSpec, Dense, DenseCache, Loss, Lstm,
    LstmCache, ModelBundle, Parameterized, SeededRng, Tensor,
};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{bundle_config, expect_model_type, prefixed, Affine};
use crate::error::{Error, Result};

pub const MODEL_TYPE: &str = "gan";

/// Each unpadded generator convolution trims 2 steps; three of them precede the output layer.
const NOISE_EXTRA: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GanConfig {
    pub seq_len: usize,
    pub lstm_units: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    /// Feed the discriminator head the across-batch feature spread.
    pub batch_std: bool,
    /// Fraction of real windows held out for the final discriminator-accuracy check.
    pub holdout_fraction: f64,
    pub seed: u64,
}

impl Default for GanConfig {
    fn default() -> Self {
        Self {
            seq_len: 10,
            lstm_units: 8,
            epochs: 300,
            batch_size: 32,
            lr: 0.001,
            beta1: 0.5,
            batch_std: true,
            holdout_fraction: 0.1,
            seed: 7,
        }
    }
}

impl GanConfig {
    pub fn noise_len(&self) -> usize {
        self.seq_len + NOISE_EXTRA
    }

    pub fn validate(&self) -> Result<()> {
        if self.seq_len < 3 || self.lstm_units == 0 || self.batch_size == 0 {
            return Err(Error::Config("GAN sizes must be positive (seq_len >= 3)".into()));
        }
        if self.lr.is_nan() || self.lr <= 0.0 {
            return Err(Error::Config("GAN learning rate must be positive".into()));
        }
        if !(0.0..0.9).contains(&self.holdout_fraction) {
            return Err(Error::Config("GAN holdout fraction must lie in [0, 0.9)".into()));
        }
        Ok(())
    }
}

fn conv(i: usize, o: usize, padding: usize, activation: Activation) -> Conv1dSpec {
    Conv1dSpec {
        in_channels: i,
        out_channels: o,
        kernel_len: 3,
        stride: 1,
        padding,
        transposed: false,
        activation,
    }
}

#[derive(Debug, Clone)]
pub struct Generator {
    lstm: Lstm,
    convs: Vec<Conv1d>,
    noise_len: usize,
}

pub struct GeneratorCache {
    lstm: LstmCache,
    convs: Vec<Conv1dCache>,
}

impl Generator {
    fn new(config: &GanConfig, rng: &mut SeededRng) -> Result<Self> {
        let h = config.lstm_units;
        let specs = [
            conv(h, 32, 0, Activation::LeakyRelu),
            conv(32, 16, 0, Activation::LeakyRelu),
            conv(16, 16, 0, Activation::LeakyRelu),
            conv(16, 1, 1, Activation::None),
        ];
        Ok(Self {
            lstm: Lstm::new(1, h, rng),
            convs: specs
                .into_iter()
                .map(|s| Conv1d::new(s, rng))
                .collect::<laserpm_nn::Result<_>>()?,
            noise_len: config.noise_len(),
        })
    }

    fn sample_noise(&self, batch: usize, rng: &mut SeededRng) -> Vec<Tensor> {
        (0..self.noise_len)
            .map(|_| {
                let col = (0..batch).map(|_| StandardNormal.sample(rng)).collect();
                Tensor::new(vec![batch, 1], col).expect("noise column")
            })
            .collect()
    }

    /// Maps noise steps (each `[batch, 1]`) to `[batch, seq_len, 1]` scaled sequences.
    pub fn forward(&self, noise: &[Tensor]) -> Result<(Tensor, GeneratorCache)> {
        let batch = noise[0].dim(0);
        let h = self.lstm.hidden_size();
        let zeros = Tensor::zeros(&[batch, h]);
        let (hs, _, lstm) = self.lstm.forward(noise, &zeros, &zeros)?;
        let steps = hs.len();
        let mut x = Tensor::zeros(&[batch, steps, h]);
        let d = x.data_mut();
        for (t, ht) in hs.iter().enumerate() {
            for b in 0..batch {
                d[(b * steps + t) * h..(b * steps + t + 1) * h].copy_from_slice(ht.row(b));
            }
        }
        let mut convs = Vec::with_capacity(self.convs.len());
        for c in &self.convs {
            let (y, cache) = c.forward(&x)?;
            convs.push(cache);
            x = y;
        }
        Ok((x, GeneratorCache { lstm, convs }))
    }

    pub fn backward(&mut self, cache: &GeneratorCache, dy: &Tensor) -> Result<()> {
        let mut d = dy.clone();
        for (c, cc) in self.convs.iter_mut().zip(&cache.convs).rev() {
            d = c.backward(cc, &d)?;
        }
        let (batch, steps, h) = (d.dim(0), d.dim(1), d.dim(2));
        let dd = d.data();
        let d_states: Vec<Tensor> = (0..steps)
            .map(|t| {
                let mut s = Vec::with_capacity(batch * h);
                for b in 0..batch {
                    s.extend_from_slice(&dd[(b * steps + t) * h..(b * steps + t + 1) * h]);
                }
                Tensor::new(vec![batch, h], s).expect("state gradient")
            })
            .collect();
        self.lstm.backward(&cache.lstm, &d_states)?;
        Ok(())
    }
}

impl Parameterized for Generator {
    fn parameters(&self) -> Vec<(String, &Tensor)> {
        let mut p = prefixed("lstm", &self.lstm);
        for (i, c) in self.convs.iter().enumerate() {
            p.extend(prefixed(&format!("conv{i}"), c));
        }
        p
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.lstm.parameters_mut();
        for c in &mut self.convs {
            p.extend(c.parameters_mut());
        }
        p
    }
}

#[derive(Debug, Clone)]
pub struct Discriminator {
    convs: Vec<Conv1d>,
    head: Dense,
    batch_std: bool,
}

pub struct DiscriminatorCache {
    convs: Vec<Conv1dCache>,
    head: DenseCache,
    conv_shape: Vec<usize>,
    /// Flattened features with their per-column batch mean and std, when `batch_std` is on.
    stats: Option<(Tensor, Vec<f64>, Vec<f64>)>,
}

const BATCH_STD_EPS: f64 = 1e-8;

/// Appends the mean over columns of the across-batch standard deviation as one extra
/// feature, so the discriminator can see a collapsed batch.
fn append_batch_std(flat: &Tensor) -> (Tensor, Vec<f64>, Vec<f64>) {
    let (batch, cols) = (flat.dim(0), flat.dim(1));
    let mut mean = vec![0.0; cols];
    for b in 0..batch {
        mean.iter_mut().zip(flat.row(b)).for_each(|(m, v)| *m += v / batch as f64);
    }
    let mut std = vec![0.0; cols];
    for b in 0..batch {
        for (j, v) in flat.row(b).iter().enumerate() {
            std[j] += (v - mean[j]).powi(2) / batch as f64;
        }
    }
    std.iter_mut().for_each(|v| *v = (*v + BATCH_STD_EPS).sqrt());
    let s = std.iter().sum::<f64>() / cols as f64;
    let mut data = Vec::with_capacity(batch * (cols + 1));
    for b in 0..batch {
        data.extend_from_slice(flat.row(b));
        data.push(s);
    }
    (
        Tensor::new(vec![batch, cols + 1], data).expect("augmented rows"),
        mean,
        std,
    )
}

impl Discriminator {
    fn new(seq_len: usize, batch_std: bool, rng: &mut SeededRng) -> Result<Self> {
        let specs = [
            conv(1, 32, 1, Activation::LeakyRelu),
            conv(32, 32, 1, Activation::LeakyRelu),
            conv(32, 32, 1, Activation::LeakyRelu),
        ];
        Ok(Self {
            convs: specs
                .into_iter()
                .map(|s| Conv1d::new(s, rng))
                .collect::<laserpm_nn::Result<_>>()?,
            head: Dense::new(32 * seq_len + batch_std as usize, 1, Activation::Sigmoid, rng),
            batch_std,
        })
    }

    /// Probability that each `[batch, seq_len, 1]` sequence is real.
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, DiscriminatorCache)> {
        let mut h = x.clone();
        let mut convs = Vec::with_capacity(self.convs.len());
        for c in &self.convs {
            let (y, cache) = c.forward(&h)?;
            convs.push(cache);
            h = y;
        }
        let conv_shape = h.shape().to_vec();
        let flat = h.reshape(vec![conv_shape[0], conv_shape[1] * conv_shape[2]])?;
        let (p, head, stats) = if self.batch_std {
            let (aug, mean, std) = append_batch_std(&flat);
            let (p, head) = self.head.forward(&aug)?;
            (p, head, Some((flat, mean, std)))
        } else {
            let (p, head) = self.head.forward(&flat)?;
            (p, head, None)
        };
        Ok((
            p,
            DiscriminatorCache {
                convs,
                head,
                conv_shape,
                stats,
            },
        ))
    }

    pub fn backward(&mut self, cache: &DiscriminatorCache, dp: &Tensor) -> Result<Tensor> {
        let d_head = self.head.backward(&cache.head, dp)?;
        let mut d = match &cache.stats {
            None => d_head,
            Some((flat, mean, std)) => {
                let (batch, cols) = (flat.dim(0), flat.dim(1));
                let ds: f64 = (0..batch).map(|b| d_head.row(b)[cols]).sum();
                let mut data = Vec::with_capacity(batch * cols);
                for b in 0..batch {
                    let row = flat.row(b);
                    for (j, g) in d_head.row(b)[..cols].iter().enumerate() {
                        let d_std = ds / cols as f64;
                        data.push(g + d_std * (row[j] - mean[j]) / (batch as f64 * std[j]));
                    }
                }
                Tensor::new(vec![batch, cols], data)?
            }
        }
        .reshape(cache.conv_shape.clone())?;
        for (c, cc) in self.convs.iter_mut().zip(&cache.convs).rev() {
            d = c.backward(cc, &d)?;
        }
        Ok(d)
    }
}

impl Parameterized for Discriminator {
    fn parameters(&self) -> Vec<(String, &Tensor)> {
        let mut p = Vec::new();
        for (i, c) in self.convs.iter().enumerate() {
            p.extend(prefixed(&format!("conv{i}"), c));
        }
        p.extend(prefixed("head", &self.head));
        p
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = Vec::new();
        for c in &mut self.convs {
            p.extend(c.parameters_mut());
        }
        p.extend(self.head.parameters_mut());
        p
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GanEpoch {
    pub epoch: usize,
    pub d_loss: f64,
    pub g_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GanReport {
    pub history: Vec<GanEpoch>,
    /// Discriminator accuracy on held-out real windows and as many fresh fakes.
    pub holdout_accuracy: Option<f64>,
}

impl GanReport {
    pub fn loss_csv(&self) -> String {
        let mut out = String::from("epoch,d_loss,g_loss\n");
        for e in &self.history {
            let _ = writeln!(out, "{},{},{}", e.epoch, e.d_loss, e.g_loss);
        }
        out
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Meta {
    config: GanConfig,
    scale: Affine,
}

#[derive(Debug, Clone)]
pub struct Gan {
    pub config: GanConfig,
    pub generator: Generator,
    pub discriminator: Discriminator,
    scale: Affine,
    trained: bool,
}

fn filled(batch: usize, v: f64) -> Tensor {
    Tensor::filled(&[batch, 1], v)
}

impl Gan {
    pub fn new(config: GanConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded_rng(config.seed);
        Ok(Self {
            config,
            generator: Generator::new(&config, &mut rng)?,
            discriminator: Discriminator::new(config.seq_len, config.batch_std, &mut rng)?,
            scale: Affine::default(),
            trained: false,
        })
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    fn real_tensor(&self, windows: &[&Vec<f64>]) -> Result<Tensor> {
        let data = windows
            .iter()
            .flat_map(|w| w.iter().map(|v| self.scale.apply(*v)))
            .collect();
        Ok(Tensor::new(vec![windows.len(), self.config.seq_len, 1], data)?)
    }

    /// One generator gradient pass with the non-saturating loss `-ln D(G(z))`.
    ///
    /// Accumulates generator gradients (discriminator gradients are left dirty) and
    /// returns the loss.
    pub fn generator_backward(&mut self, batch: usize, rng: &mut SeededRng) -> Result<f64> {
        let noise = self.generator.sample_noise(batch, rng);
        let (fake, gcache) = self.generator.forward(&noise)?;
        let (p, dcache) = self.discriminator.forward(&fake)?;
        let ones = filled(batch, 1.0);
        let loss = Loss::Bce.value(&p, &ones)?;
        let dx = self
            .discriminator
            .backward(&dcache, &Loss::Bce.gradient(&p, &ones)?)?;
        self.generator.backward(&gcache, &dx)?;
        Ok(loss)
    }

    fn discriminator_backward(&mut self, real: &Tensor, rng: &mut SeededRng) -> Result<f64> {
        let batch = real.dim(0);
        let noise = self.generator.sample_noise(batch, rng);
        let fake = self.generator.forward(&noise)?.0;
        let mut total = 0.0;
        for (x, label) in [(real, 1.0), (&fake, 0.0)] {
            let (p, cache) = self.discriminator.forward(x)?;
            let t = filled(batch, label);
            total += Loss::Bce.value(&p, &t)?;
            self.discriminator.backward(&cache, &Loss::Bce.gradient(&p, &t)?)?;
        }
        Ok(total / 2.0)
    }

    /// Alternating discriminator/generator updates over mini-batches of real windows.
    pub fn train(&mut self, real: &[Vec<f64>]) -> Result<GanReport> {
        if real.is_empty() {
            return Err(Error::Argument("GAN training set is empty".into()));
        }
        if let Some(w) = real.iter().find(|w| w.len() != self.config.seq_len) {
            return Err(Error::Shape(format!(
                "GAN expects windows of {}, got {}",
                self.config.seq_len,
                w.len()
            )));
        }
        let mut rng = seeded_rng(self.config.seed ^ 0x6a4);
        let mut order: Vec<usize> = (0..real.len()).collect();
        order.shuffle(&mut rng);
        let n_hold = if real.len() >= 10 {
            (real.len() as f64 * self.config.holdout_fraction).floor() as usize
        } else {
            0
        };
        let (hold, train) = order.split_at(n_hold);
        let mut train = train.to_vec();
        self.scale = Affine::fit(train.iter().flat_map(|&i| &real[i]));

        let mut adam_d = Adam::new(self.config.lr);
        let mut adam_g = Adam::new(self.config.lr);
        adam_d.beta1 = self.config.beta1;
        adam_g.beta1 = self.config.beta1;
        let mut history = Vec::with_capacity(self.config.epochs);
        for epoch in 1..=self.config.epochs {
            train.shuffle(&mut rng);
            let (mut d_sum, mut g_sum, mut batches) = (0.0, 0.0, 0);
            for chunk in train.chunks(self.config.batch_size) {
                let batch: Vec<&Vec<f64>> = chunk.iter().map(|&i| &real[i]).collect();
                let x = self.real_tensor(&batch)?;
                self.discriminator.zero_grad();
                d_sum += self.discriminator_backward(&x, &mut rng)?;
                adam_d.step(&mut self.discriminator.parameters_mut())?;

                self.generator.zero_grad();
                g_sum += self.generator_backward(chunk.len(), &mut rng)?;
                adam_g.step(&mut self.generator.parameters_mut())?;
                batches += 1;
            }
            let (d_loss, g_loss) = (d_sum / batches as f64, g_sum / batches as f64);
            if !(d_loss.is_finite() && g_loss.is_finite()) {
                return Err(Error::Nn(laserpm_nn::NnError::Numeric(format!(
                    "GAN losses diverged at epoch {epoch}"
                ))));
            }
            history.push(GanEpoch {
                epoch,
                d_loss,
                g_loss,
            });
        }
        for p in self
            .generator
            .parameters_mut()
            .into_iter()
            .chain(self.discriminator.parameters_mut())
        {
            p.clear_grad();
        }
        self.trained = true;

        let holdout_accuracy = if hold.is_empty() {
            None
        } else {
            let batch: Vec<&Vec<f64>> = hold.iter().map(|&i| &real[i]).collect();
            let (p_real, _) = self.discriminator.forward(&self.real_tensor(&batch)?)?;
            let noise = self.generator.sample_noise(hold.len(), &mut rng);
            let (p_fake, _) = self.discriminator.forward(&self.generator.forward(&noise)?.0)?;
            let correct = p_real.data().iter().filter(|p| **p > 0.5).count()
                + p_fake.data().iter().filter(|p| **p <= 0.5).count();
            Some(correct as f64 / (2 * hold.len()) as f64)
        };
        Ok(GanReport {
            history,
            holdout_accuracy,
        })
    }

    /// Draws `n` synthetic windows in normalized-current units.
    pub fn generate(&self, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        if !self.trained {
            return Err(Error::State("GAN has not been trained or loaded".into()));
        }
        let mut rng = seeded_rng(seed);
        let mut out = Vec::with_capacity(n);
        let mut left = n;
        while left > 0 {
            let batch = left.min(256);
            let noise = self.generator.sample_noise(batch, &mut rng);
            let (y, _) = self.generator.forward(&noise)?;
            out.extend(
                y.data()
                    .chunks(self.config.seq_len)
                    .map(|r| r.iter().map(|v| self.scale.invert(*v)).collect::<Vec<f64>>()),
            );
            left -= batch;
        }
        if out.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Nn(laserpm_nn::NnError::Numeric(
                "generator produced non-finite values".into(),
            )));
        }
        Ok(out)
    }

    /// Discriminator probabilities for windows in normalized-current units.
    pub fn discriminate(&self, windows: &[Vec<f64>]) -> Result<Vec<f64>> {
        let refs: Vec<&Vec<f64>> = windows.iter().collect();
        Ok(self.discriminator.forward(&self.real_tensor(&refs)?)?.0.into_data())
    }

    pub fn to_bundle(&self) -> Result<ModelBundle> {
        let mut b = ModelBundle::new(MODEL_TYPE, self.config.seed);
        let mut specs = vec![serde_json::to_value(self.generator.lstm.spec())?];
        for c in self.generator.convs.iter().chain(&self.discriminator.convs) {
            specs.push(serde_json::to_value(c.spec())?);
        }
        specs.push(serde_json::to_value(self.discriminator.head.spec())?);
        b.layer_specs = specs;
        b.export("generator", &self.generator);
        b.export("discriminator", &self.discriminator);
        b.train_config = serde_json::to_value(Meta {
            config: self.config,
            scale: self.scale,
        })?;
        Ok(b)
    }

    pub fn from_bundle(bundle: &ModelBundle) -> Result<Self> {
        expect_model_type(bundle, MODEL_TYPE)?;
        let meta: Meta = bundle_config(bundle)?;
        let mut m = Self::new(meta.config)?;
        bundle.import("generator", &mut m.generator)?;
        bundle.import("discriminator", &mut m.discriminator)?;
        m.scale = meta.scale;
        m.trained = true;
        Ok(m)
    }
}
