//! Offline evaluation over a labeled corpus: residuals, detection scores, RUL errors,
//! inference timings and the window-length ablation grid.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::datagen::{
    detect_windows, forecast_windows, rul_windows, normalize, CurrentTrace, DetectSelection,
    DeviceState, TraceSource,
};
use crate::error::{Error, Result};
use crate::metrics::{
    classification_scores, confusion_at, cvrmse, mae, mape, mean_std, rmse, tune_threshold,
    ClassificationScores, ConfusionCounts, ThresholdGrid,
};
use crate::models::forecaster::ForecasterConfig;
use crate::models::{Autoencoder, Forecaster, RulConfig, RulModel, TrainConfig};

use super::Models;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualStats {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
}

impl ResidualStats {
    pub fn of(residuals: &[f64]) -> Self {
        let (mean, std) = mean_std(residuals);
        Self {
            n: residuals.len(),
            mean,
            std,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForecastScores {
    pub residuals: ResidualStats,
    pub rmse: f64,
    pub mae: f64,
    pub mape: f64,
    pub cvrmse: f64,
}

impl ForecastScores {
    /// Residuals are `prediction - truth`.
    pub fn of(truth: &[f64], pred: &[f64]) -> Result<Self> {
        let residuals: Vec<f64> = pred.iter().zip(truth).map(|(p, t)| p - t).collect();
        Ok(Self {
            residuals: ResidualStats::of(&residuals),
            rmse: rmse(truth, pred)?,
            mae: mae(truth, pred)?,
            mape: mape(truth, pred)?,
            cvrmse: cvrmse(truth, pred)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HorizonResidual {
    pub step: usize,
    pub stats: ResidualStats,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub threshold: f64,
    pub normal_windows: usize,
    pub anomalous_windows: usize,
    pub counts: ConfusionCounts,
    pub scores: ClassificationScores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageError {
    pub stage: String,
    pub rul_lo_h: f64,
    pub rul_hi_h: Option<f64>,
    pub n: usize,
    pub rmse: Option<f64>,
    pub mae: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RulReport {
    pub n: usize,
    pub rmse: f64,
    pub mae: f64,
    pub stages: Vec<StageError>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub forecaster_us_per_window: f64,
    pub detector_us_per_window: f64,
    pub rul_us_per_window: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationTask {
    Forecast,
    Detect,
    Rul,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub task: AblationTask,
    pub window: usize,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationConfig {
    pub train: TrainConfig,
    /// Keep every `stride`-th training window per trace.
    pub stride: usize,
    pub forecast_lengths: Vec<usize>,
    pub detect_lengths: Vec<usize>,
    pub rul_lengths: Vec<usize>,
    pub seed: u64,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig {
                epochs: 30,
                ..TrainConfig::default()
            },
            stride: 1,
            forecast_lengths: (5..=9).collect(),
            detect_lengths: (5..=10).collect(),
            rul_lengths: (5..=10).collect(),
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationConfig {
    pub threshold: f64,
    /// Longest horizon for the recursive residual table.
    pub recursive_steps: usize,
    pub ablation: Option<AblationConfig>,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            threshold: f64::INFINITY,
            recursive_steps: 3,
            ablation: Some(AblationConfig::default()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub one_step_residuals: ForecastScores,
    pub recursive_residuals: Vec<HorizonResidual>,
    pub detection_scores: DetectionReport,
    pub rul_rmse_mae: RulReport,
    pub ablations: Vec<AblationRow>,
    pub timings: Timings,
}

impl EvaluationReport {
    /// Every metric except the wall-clock timings, one `metric,value` row each.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        let mut row = |name: &str, v: f64| {
            let _ = writeln!(out, "{name},{v}");
        };
        let f = &self.one_step_residuals;
        row("one_step_residual_mean", f.residuals.mean);
        row("one_step_residual_std", f.residuals.std);
        row("one_step_rmse", f.rmse);
        row("one_step_mae", f.mae);
        row("one_step_mape", f.mape);
        row("one_step_cvrmse", f.cvrmse);
        for h in &self.recursive_residuals {
            row(&format!("recursive_step{}_residual_mean", h.step), h.stats.mean);
            row(&format!("recursive_step{}_residual_std", h.step), h.stats.std);
        }
        let d = &self.detection_scores;
        row("detection_threshold", d.threshold);
        row("detection_precision", d.scores.precision);
        row("detection_recall", d.scores.recall);
        row("detection_f1", d.scores.f1);
        row("detection_accuracy", d.scores.accuracy);
        row("rul_rmse_h", self.rul_rmse_mae.rmse);
        row("rul_mae_h", self.rul_rmse_mae.mae);
        for s in &self.rul_rmse_mae.stages {
            if let (Some(r), Some(m)) = (s.rmse, s.mae) {
                row(&format!("rul_{}_rmse_h", s.stage), r);
                row(&format!("rul_{}_mae_h", s.stage), m);
            }
        }
        for a in &self.ablations {
            let task = match a.task {
                AblationTask::Forecast => "forecast",
                AblationTask::Detect => "detect",
                AblationTask::Rul => "rul",
            };
            row(&format!("ablation_{task}_len{}_{}", a.window, a.metric), a.value);
        }
        out
    }
}

fn strided<T>(samples: Vec<T>, stride: usize, offset: impl Fn(&T) -> usize) -> Vec<T> {
    let stride = stride.max(1);
    samples.into_iter().filter(|s| offset(s).is_multiple_of(stride)).collect()
}

fn normal_traces(corpus: &[CurrentTrace]) -> Vec<CurrentTrace> {
    corpus
        .iter()
        .filter(|t| t.state == DeviceState::Normal)
        .cloned()
        .collect()
}

/// Trains a forecaster on the normal traces of `train`.
pub fn train_forecaster(
    train: &[CurrentTrace],
    config: ForecasterConfig,
    train_config: &TrainConfig,
    stride: usize,
) -> Result<Forecaster> {
    let samples = forecast_windows(&normal_traces(train), config.window, config.horizon)?.samples;
    let samples = strided(samples, stride, |s| s.offset);
    let mut model = Forecaster::new(config, train_config.seed)?;
    model.train(&samples, train_config)?;
    Ok(model)
}

/// One-step scores on the normal traces of `test`, over targets at trace index
/// `first_target` or later so that different window lengths share a target set.
pub fn forecast_scores(model: &Forecaster, test: &[CurrentTrace], first_target: usize) -> Result<ForecastScores> {
    let window = model.config.window;
    let samples: Vec<_> = forecast_windows(&normal_traces(test), window, 1)?
        .samples
        .into_iter()
        .filter(|s| s.offset + window >= first_target)
        .collect();
    if samples.is_empty() {
        return Err(Error::Argument("no forecast targets in the test corpus".into()));
    }
    let inputs: Vec<&[f64]> = samples.iter().map(|s| s.inputs.as_slice()).collect();
    let pred: Vec<f64> = model.predict_batch(&inputs)?.into_iter().map(|p| p[0]).collect();
    let truth: Vec<f64> = samples.iter().map(|s| s.targets[0]).collect();
    ForecastScores::of(&truth, &pred)
}

/// CVRMSE of two-value-ahead forecasts on normal test traces: the one-step model fed
/// back on itself versus a model trained to emit both values directly.
pub fn recursive_vs_direct(
    one_step: &Forecaster,
    two_step: &Forecaster,
    test: &[CurrentTrace],
) -> Result<(f64, f64)> {
    if one_step.config.horizon != 1 || two_step.config.horizon != 2 {
        return Err(Error::Argument("expected horizons 1 and 2".into()));
    }
    if one_step.config.window != two_step.config.window {
        return Err(Error::Argument("models must share the input window".into()));
    }
    let samples = forecast_windows(&normal_traces(test), one_step.config.window, 2)?.samples;
    if samples.is_empty() {
        return Err(Error::Argument("no two-step targets in the test corpus".into()));
    }
    let inputs: Vec<&[f64]> = samples.iter().map(|s| s.inputs.as_slice()).collect();
    let truth: Vec<f64> = samples.iter().flat_map(|s| s.targets.iter().copied()).collect();
    let recursive = one_step.predict_recursive_batch(&inputs, 2)?.concat();
    let direct = two_step.predict_batch(&inputs)?.concat();
    Ok((cvrmse(&truth, &recursive)?, cvrmse(&truth, &direct)?))
}

/// Trains a detector on normal windows of `train` and tunes θ on its labeled windows.
pub fn train_detector(
    train: &[CurrentTrace],
    window: usize,
    train_config: &TrainConfig,
    stride: usize,
) -> Result<Autoencoder> {
    let samples = detect_windows(train, window, DetectSelection::NormalOnly)?.samples;
    let samples = strided(samples, stride, |s| s.offset);
    let mut model = Autoencoder::new(crate::models::autoencoder::AutoencoderConfig { window }, train_config.seed)?;
    model.train(&samples, train_config)?;
    let (normal, anomalous) = labeled_scores(&model, train)?;
    model.threshold = Some(tune_threshold(&normal, &anomalous, ThresholdGrid::default())?.theta);
    Ok(model)
}

/// Anomaly scores of the labeled windows of `corpus`, split by label.
pub fn labeled_scores(model: &Autoencoder, corpus: &[CurrentTrace]) -> Result<(Vec<f64>, Vec<f64>)> {
    let samples = detect_windows(corpus, model.config.window, DetectSelection::Labeled)?.samples;
    let windows: Vec<&[f64]> = samples.iter().map(|s| s.values.as_slice()).collect();
    let scores = model.score_batch(&windows)?;
    let mut normal = Vec::new();
    let mut anomalous = Vec::new();
    for (s, score) in samples.iter().zip(scores) {
        if s.anomalous {
            anomalous.push(score);
        } else {
            normal.push(score);
        }
    }
    if normal.is_empty() || anomalous.is_empty() {
        return Err(Error::Argument("corpus lacks normal or anomalous labeled windows".into()));
    }
    Ok((normal, anomalous))
}

pub fn detection_report(model: &Autoencoder, corpus: &[CurrentTrace], threshold: f64) -> Result<DetectionReport> {
    let (normal, anomalous) = labeled_scores(model, corpus)?;
    let counts = confusion_at(&normal, &anomalous, threshold);
    Ok(DetectionReport {
        threshold,
        normal_windows: normal.len(),
        anomalous_windows: anomalous.len(),
        counts,
        scores: classification_scores(&counts)?,
    })
}

pub fn train_rul(
    train: &[CurrentTrace],
    config: RulConfig,
    train_config: &TrainConfig,
    stride: usize,
) -> Result<RulModel> {
    let samples = strided(rul_windows(train, config.window)?.samples, stride, |s| s.offset);
    let mut model = RulModel::new(config, train_config.seed)?;
    model.train(&samples, train_config)?;
    Ok(model)
}

const STAGES: [(&str, f64, Option<f64>); 3] = [
    ("late", 0.0, Some(500.0)),
    ("mid", 500.0, Some(1500.0)),
    ("early", 1500.0, None),
];

/// RMSE and MAE in hours, overall and by true-RUL stage.
pub fn rul_report(model: &RulModel, test: &[CurrentTrace]) -> Result<RulReport> {
    let samples = rul_windows(test, model.config.window)?.samples;
    if samples.is_empty() {
        return Err(Error::Argument("no RUL-labeled windows in the test corpus".into()));
    }
    let seqs: Vec<&[f64]> = samples.iter().map(|s| s.values.as_slice()).collect();
    let stats: Vec<_> = samples.iter().map(|s| &s.stats).collect();
    let pred = model.predict_batch(&seqs, &stats)?;
    let truth: Vec<f64> = samples.iter().map(|s| s.rul_h).collect();
    let stages = STAGES
        .iter()
        .map(|&(stage, lo, hi)| {
            let idx: Vec<usize> = (0..truth.len())
                .filter(|&i| truth[i] >= lo && hi.is_none_or(|h| truth[i] < h))
                .collect();
            let t: Vec<f64> = idx.iter().map(|&i| truth[i]).collect();
            let p: Vec<f64> = idx.iter().map(|&i| pred[i]).collect();
            StageError {
                stage: stage.into(),
                rul_lo_h: lo,
                rul_hi_h: hi,
                n: idx.len(),
                rmse: rmse(&t, &p).ok(),
                mae: mae(&t, &p).ok(),
            }
        })
        .collect();
    Ok(RulReport {
        n: truth.len(),
        rmse: rmse(&truth, &pred)?,
        mae: mae(&truth, &pred)?,
        stages,
    })
}

/// Splits a corpus into alternating devices.
pub fn split_alternating(corpus: &[CurrentTrace]) -> (Vec<CurrentTrace>, Vec<CurrentTrace>) {
    let (a, b): (Vec<_>, Vec<_>) = corpus.iter().cloned().enumerate().partition(|(i, _)| i % 2 == 0);
    (a.into_iter().map(|(_, t)| t).collect(), b.into_iter().map(|(_, t)| t).collect())
}

/// Retrains each model at every configured window length and scores it on `test`.
pub fn ablation_grid(
    train: &[CurrentTrace],
    test: &[CurrentTrace],
    config: &AblationConfig,
) -> Result<Vec<AblationRow>> {
    let tc = TrainConfig {
        seed: config.seed,
        ..config.train
    };
    let mut rows = Vec::new();
    let first_target = config.forecast_lengths.iter().copied().max().unwrap_or(0);
    for &window in &config.forecast_lengths {
        let cfg = ForecasterConfig {
            window,
            ..ForecasterConfig::default()
        };
        let model = train_forecaster(train, cfg, &tc, config.stride)?;
        rows.push(AblationRow {
            task: AblationTask::Forecast,
            window,
            metric: "cvrmse".into(),
            value: forecast_scores(&model, test, first_target)?.cvrmse,
        });
    }
    for &window in &config.detect_lengths {
        let model = train_detector(train, window, &tc, config.stride)?;
        let theta = model.threshold.unwrap_or(f64::INFINITY);
        rows.push(AblationRow {
            task: AblationTask::Detect,
            window,
            metric: "f1".into(),
            value: detection_report(&model, test, theta)?.scores.f1,
        });
    }
    for &window in &config.rul_lengths {
        let cfg = RulConfig {
            window,
            ..RulConfig::default()
        };
        let model = train_rul(train, cfg, &tc, config.stride)?;
        rows.push(AblationRow {
            task: AblationTask::Rul,
            window,
            metric: "rmse_h".into(),
            value: rul_report(&model, test)?.rmse,
        });
    }
    Ok(rows)
}

fn micros_per(start: Instant, n: usize) -> f64 {
    start.elapsed().as_secs_f64() * 1e6 / n.max(1) as f64
}

/// Scores the trained models on a labeled simulator corpus.
///
/// The ablation grid retrains fresh models on alternating devices of the same corpus.
pub fn run_batch_evaluation(
    corpus: &[CurrentTrace],
    models: &Models,
    config: &EvaluationConfig,
) -> Result<EvaluationReport> {
    if corpus.iter().any(|t| t.source == TraceSource::GanSynthetic) {
        return Err(Error::Argument("evaluation needs a labeled simulator corpus, not synthetic traces".into()));
    }
    if !corpus.iter().any(|t| t.state == DeviceState::Anomalous)
        || !corpus.iter().any(|t| t.state == DeviceState::Normal)
    {
        return Err(Error::Argument("evaluation corpus must contain normal and anomalous devices".into()));
    }
    let fc = &models.forecaster;
    if fc.config.horizon != 1 {
        return Err(Error::Config("evaluation expects a one-step forecaster".into()));
    }

    let start = Instant::now();
    let one_step = forecast_scores(fc, corpus, 0)?;
    let forecaster_us = micros_per(start, one_step.residuals.n);

    let window = fc.config.window;
    let mut per_step: Vec<Vec<f64>> = vec![Vec::new(); config.recursive_steps];
    for trace in normal_traces(corpus) {
        let r = normalize(&trace)?;
        if r.len() <= window {
            continue;
        }
        let steps = config.recursive_steps.min(r.len() - window);
        let pred = fc.predict_recursive(&r[..window], steps)?;
        for (k, p) in pred.iter().enumerate() {
            per_step[k].push(p - r[window + k]);
        }
    }
    let recursive_residuals = per_step
        .iter()
        .enumerate()
        .filter(|(_, r)| !r.is_empty())
        .map(|(k, r)| HorizonResidual {
            step: k + 1,
            stats: ResidualStats::of(r),
        })
        .collect();

    let start = Instant::now();
    let detection = detection_report(&models.detector, corpus, config.threshold)?;
    let detector_us = micros_per(start, detection.normal_windows + detection.anomalous_windows);

    let start = Instant::now();
    let rul = rul_report(&models.rul, corpus)?;
    let rul_us = micros_per(start, rul.n);

    let ablations = match &config.ablation {
        Some(a) => {
            let (train, test) = split_alternating(corpus);
            ablation_grid(&train, &test, a)?
        }
        None => Vec::new(),
    };

    Ok(EvaluationReport {
        one_step_residuals: one_step,
        recursive_residuals,
        detection_scores: detection,
        rul_rmse_mae: rul,
        ablations,
        timings: Timings {
            forecaster_us_per_window: forecaster_us,
            detector_us_per_window: detector_us,
            rul_us_per_window: rul_us,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub real: usize,
    pub synthetic: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub time_index: usize,
    pub bins: Vec<HistogramBin>,
    /// Synthetic values below the real minimum / above the real maximum.
    pub synthetic_below_real: usize,
    pub synthetic_above_real: usize,
}

impl Histogram {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_lo,bin_hi,real_count,synthetic_count\n");
        for b in &self.bins {
            let _ = writeln!(out, "{},{},{},{}", b.lo, b.hi, b.real, b.synthetic);
        }
        out
    }
}

/// Fixed-width histograms of the values at `time_index`, over the joint range of both
/// corpora. The last bin is closed on the right.
pub fn export_histograms(
    real: &[Vec<f64>],
    synthetic: &[Vec<f64>],
    time_index: usize,
    bins: usize,
) -> Result<Histogram> {
    if real.is_empty() || synthetic.is_empty() {
        return Err(Error::Argument("histograms need non-empty corpora".into()));
    }
    if bins == 0 {
        return Err(Error::Argument("bin count must be positive".into()));
    }
    let column = |set: &[Vec<f64>]| -> Result<Vec<f64>> {
        set.iter()
            .map(|w| {
                w.get(time_index).copied().ok_or_else(|| {
                    Error::Argument(format!("window of length {} has no index {time_index}", w.len()))
                })
            })
            .collect()
    };
    let (r, s) = (column(real)?, column(synthetic)?);
    let range = |xs: &[f64]| {
        xs.iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)))
    };
    let (rlo, rhi) = range(&r);
    let (slo, shi) = range(&s);
    let (lo, hi) = (rlo.min(slo), rhi.max(shi));
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let index = |v: f64| (((v - lo) / width) as usize).min(bins - 1);
    let mut table: Vec<HistogramBin> = (0..bins)
        .map(|k| HistogramBin {
            lo: lo + width * k as f64,
            hi: if k + 1 == bins { hi.max(lo + width) } else { lo + width * (k + 1) as f64 },
            real: 0,
            synthetic: 0,
        })
        .collect();
    for v in &r {
        table[index(*v)].real += 1;
    }
    for v in &s {
        table[index(*v)].synthetic += 1;
    }
    Ok(Histogram {
        time_index,
        bins: table,
        synthetic_below_real: s.iter().filter(|v| **v < rlo).count(),
        synthetic_above_real: s.iter().filter(|v| **v > rhi).count(),
    })
}
