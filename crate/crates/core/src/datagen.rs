//! Laser aging simulator, failure labeling, normalization, windowing and
//! statistical features.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use laserpm_nn::seeded_rng;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Monitoring times of the aging test, in hours.
pub const AGING_SCHEDULE_H: [f64; 12] = [
    2.0, 20.0, 40.0, 60.0, 80.0, 100.0, 150.0, 500.0, 1000.0, 1500.0, 2000.0, 3000.0,
];

/// Relative current increase that defines failure.
pub const FAILURE_RATIO: f64 = 1.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviceState {
    Normal,
    Anomalous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceSource {
    SimulatedReal,
    GanSynthetic,
}

/// One device's monitored drive current.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurrentTrace {
    pub device_id: String,
    pub times_h: Vec<f64>,
    #[serde(rename = "currents_mA")]
    pub currents_ma: Vec<f64>,
    #[serde(rename = "initial_current_mA")]
    pub initial_current_ma: f64,
    pub state: DeviceState,
    pub failure_time_h: Option<f64>,
    pub source: TraceSource,
    /// Simulator ground truth: times at which sudden upward jumps took effect.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub jump_times_h: Vec<f64>,
}

impl CurrentTrace {
    /// Builds a trace and derives `initial_current_ma` and `failure_time_h`.
    pub fn new(
        device_id: impl Into<String>,
        times_h: Vec<f64>,
        currents_ma: Vec<f64>,
        state: DeviceState,
        source: TraceSource,
    ) -> Result<Self> {
        let initial = *currents_ma
            .first()
            .ok_or_else(|| Error::Data("trace without measurements".into()))?;
        let mut trace = Self {
            device_id: device_id.into(),
            times_h,
            currents_ma,
            initial_current_ma: initial,
            state,
            failure_time_h: None,
            source,
            jump_times_h: Vec::new(),
        };
        trace.failure_time_h = label_failure(&trace).failure_time_h;
        trace.validate()?;
        Ok(trace)
    }

    pub fn len(&self) -> usize {
        self.times_h.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times_h.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let id = &self.device_id;
        if self.times_h.len() != self.currents_ma.len() {
            return Err(Error::Data(format!("{id}: times and currents differ in length")));
        }
        if self.times_h.is_empty() {
            return Err(Error::Data(format!("{id}: empty trace")));
        }
        if self.times_h.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Data(format!("{id}: times are not strictly increasing")));
        }
        if self.currents_ma.iter().any(|c| !(c.is_finite() && *c > 0.0)) {
            return Err(Error::Data(format!("{id}: currents must be positive and finite")));
        }
        if self.initial_current_ma != self.currents_ma[0] {
            return Err(Error::Data(format!("{id}: initial current differs from first sample")));
        }
        if self.failure_time_h != label_failure(self).failure_time_h {
            return Err(Error::Data(format!(
                "{id}: failure time inconsistent with the 20% criterion"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulatorConfig {
    pub device_count: usize,
    pub anomalous_fraction: f64,
    pub initial_current_range_ma: (f64, f64),
    /// Wear law `I₀(1 + A·t^m)`: `A` is chosen per device so that `A·t_end^m`
    /// (the relative drift at the last scheduled time) is log-uniform in this range.
    pub wear_drift_range: (f64, f64),
    pub wear_exponent_range: (f64, f64),
    /// Relative standard deviation of multiplicative measurement noise.
    pub noise_sigma: f64,
    /// Relative magnitude of each sudden jump on anomalous devices.
    pub jump_magnitude_range: (f64, f64),
    pub max_jumps: usize,
    /// Jumps land on schedule indices within this fraction of the trace.
    pub jump_position_range: (f64, f64),
    pub seed: u64,
    pub schedule_h: Vec<f64>,
}

impl Default for SimulatorConfig {
    fn default() -> Self {
        Self {
            device_count: 384,
            anomalous_fraction: 106.0 / 384.0,
            initial_current_range_ma: (25.0, 45.0),
            wear_drift_range: (0.03, 0.45),
            wear_exponent_range: (0.6, 1.6),
            noise_sigma: 0.004,
            jump_magnitude_range: (0.06, 0.15),
            max_jumps: 2,
            jump_position_range: (0.25, 0.8),
            seed: 7,
            schedule_h: AGING_SCHEDULE_H.to_vec(),
        }
    }
}

fn check_range(name: &str, r: (f64, f64), lower: f64) -> Result<()> {
    if !(r.0.is_finite() && r.1.is_finite() && r.0 <= r.1 && r.0 >= lower) {
        return Err(Error::Argument(format!("{name} range {r:?} is invalid")));
    }
    Ok(())
}

impl SimulatorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.anomalous_fraction) {
            return Err(Error::Argument("anomalous_fraction must lie in [0, 1]".into()));
        }
        check_range("initial current", self.initial_current_range_ma, f64::MIN_POSITIVE)?;
        check_range("wear drift", self.wear_drift_range, 0.0)?;
        check_range("wear exponent", self.wear_exponent_range, f64::MIN_POSITIVE)?;
        check_range("jump magnitude", self.jump_magnitude_range, 0.0)?;
        check_range("jump position", self.jump_position_range, 0.0)?;
        if self.jump_position_range.1 > 1.0 {
            return Err(Error::Argument("jump positions are fractions of the trace".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma < 0.2) {
            return Err(Error::Argument("noise sigma must lie in [0, 0.2)".into()));
        }
        if self.anomalous_fraction > 0.0 && self.max_jumps == 0 {
            return Err(Error::Argument("anomalous devices need max_jumps >= 1".into()));
        }
        if self.schedule_h.is_empty()
            || self.schedule_h[0] <= 0.0
            || self.schedule_h.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(Error::Argument(
                "schedule must be positive and strictly increasing".into(),
            ));
        }
        Ok(())
    }

    pub fn anomalous_count(&self) -> usize {
        (self.anomalous_fraction * self.device_count as f64).round() as usize
    }
}

fn sample_range(rng: &mut impl Rng, r: (f64, f64)) -> f64 {
    if r.1 > r.0 {
        rng.random_range(r.0..r.1)
    } else {
        r.0
    }
}

fn sample_log_range(rng: &mut impl Rng, r: (f64, f64)) -> f64 {
    if r.0 > 0.0 && r.1 > r.0 {
        sample_range(rng, (r.0.ln(), r.1.ln())).exp()
    } else {
        sample_range(rng, r)
    }
}

fn simulate_device(config: &SimulatorConfig, index: usize, anomalous: bool) -> Result<CurrentTrace> {
    let mut rng = seeded_rng(config.seed);
    rng.set_stream(index as u64 + 1);
    let schedule = &config.schedule_h;
    let t_end = *schedule.last().expect("validated schedule");
    let i0 = sample_range(&mut rng, config.initial_current_range_ma);
    let m = sample_range(&mut rng, config.wear_exponent_range);
    let drift = sample_log_range(&mut rng, config.wear_drift_range);
    let a = drift / t_end.powf(m);
    let noise = Normal::new(0.0, config.noise_sigma).expect("validated sigma");

    let mut jumps: Vec<(usize, f64)> = Vec::new();
    if anomalous {
        let n = schedule.len();
        let lo = ((config.jump_position_range.0 * (n - 1) as f64).round() as usize).max(1);
        let hi = ((config.jump_position_range.1 * (n - 1) as f64).round() as usize).clamp(lo, n - 1);
        let mut slots: Vec<usize> = (lo..=hi).collect();
        slots.shuffle(&mut rng);
        let count = rng.random_range(1..=config.max_jumps).min(slots.len());
        for &slot in &slots[..count] {
            jumps.push((slot, sample_range(&mut rng, config.jump_magnitude_range)));
        }
        jumps.sort_by_key(|j| j.0);
    }

    let currents: Vec<f64> = schedule
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let jump: f64 = jumps
                .iter()
                .filter(|(slot, _)| *slot <= k)
                .map(|(_, mag)| 1.0 + mag)
                .product();
            let eps: f64 = noise.sample(&mut rng);
            i0 * (1.0 + a * t.powf(m)) * jump * (1.0 + eps)
        })
        .collect();
    let state = if anomalous {
        DeviceState::Anomalous
    } else {
        DeviceState::Normal
    };
    let mut trace = CurrentTrace::new(
        format!("dev-{index:04}"),
        schedule.clone(),
        currents,
        state,
        TraceSource::SimulatedReal,
    )?;
    trace.jump_times_h = jumps.iter().map(|(slot, _)| schedule[*slot]).collect();
    Ok(trace)
}

/// Generates a seeded corpus of normal and anomalous device traces.
pub fn simulate_corpus(config: &SimulatorConfig) -> Result<Vec<CurrentTrace>> {
    config.validate()?;
    let mut order: Vec<usize> = (0..config.device_count).collect();
    order.shuffle(&mut seeded_rng(config.seed));
    let mut anomalous = vec![false; config.device_count];
    for &i in order.iter().take(config.anomalous_count()) {
        anomalous[i] = true;
    }
    (0..config.device_count)
        .map(|i| simulate_device(config, i, anomalous[i]))
        .collect()
}

/// Failure time and per-sample RUL labels of one trace.
#[derive(Debug, Clone, PartialEq)]
pub struct FailureLabel {
    pub failure_time_h: Option<f64>,
    /// `t_f - t` for samples at or before `t_f`; `None` elsewhere or without failure.
    pub rul_h: Vec<Option<f64>>,
}

/// First scheduled time at which the current reaches 120% of its initial value.
pub fn label_failure(trace: &CurrentTrace) -> FailureLabel {
    let i0 = trace.currents_ma.first().copied().unwrap_or(0.0);
    let failure_time_h = trace
        .times_h
        .iter()
        .zip(&trace.currents_ma)
        .find(|(_, c)| **c >= FAILURE_RATIO * i0)
        .map(|(t, _)| *t);
    let rul_h = trace
        .times_h
        .iter()
        .map(|t| failure_time_h.filter(|tf| t <= tf).map(|tf| tf - t))
        .collect();
    FailureLabel {
        failure_time_h,
        rul_h,
    }
}

/// Current ratios `I_t / I₀`.
pub fn normalize(trace: &CurrentTrace) -> Result<Vec<f64>> {
    let i0 = trace.initial_current_ma;
    if !(i0 > 0.0 && i0.is_finite()) {
        return Err(Error::Data(format!(
            "{}: initial current {i0} must be positive",
            trace.device_id
        )));
    }
    Ok(trace.currents_ma.iter().map(|c| c / i0).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatFeatures {
    pub rms: f64,
    pub kurtosis_beta: f64,
    pub skewness_delta: f64,
    /// Set when the window has zero variance and the shape moments were forced to 0.
    pub degenerate: bool,
}

impl StatFeatures {
    pub fn as_array(&self) -> [f64; 3] {
        [self.rms, self.kurtosis_beta, self.skewness_delta]
    }
}

/// RMS, population kurtosis `m₄/m₂²` (non-excess) and skewness `m₃/m₂^{3/2}`.
pub fn stat_features(window: &[f64]) -> Result<StatFeatures> {
    if window.len() < 2 {
        return Err(Error::Argument("statistical features need at least 2 values".into()));
    }
    let n = window.len() as f64;
    let rms = (window.iter().map(|x| x * x).sum::<f64>() / n).sqrt();
    let mean = window.iter().sum::<f64>() / n;
    let moment = |p: i32| window.iter().map(|x| (x - mean).powi(p)).sum::<f64>() / n;
    let m2 = moment(2);
    // Relative to the signal scale so rounding noise on a constant window counts as flat.
    if m2 <= f64::EPSILON * f64::EPSILON * mean * mean || m2 == 0.0 {
        return Ok(StatFeatures {
            rms,
            kurtosis_beta: 0.0,
            skewness_delta: 0.0,
            degenerate: true,
        });
    }
    Ok(StatFeatures {
        rms,
        kurtosis_beta: moment(4) / (m2 * m2),
        skewness_delta: moment(3) / m2.powf(1.5),
        degenerate: false,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowSet<T> {
    pub samples: Vec<T>,
    /// Traces too short to yield a single window.
    pub skipped_traces: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastSample {
    pub device_id: String,
    pub offset: usize,
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectSample {
    pub device_id: String,
    pub offset: usize,
    pub values: Vec<f64>,
    pub anomalous: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RulSample {
    pub device_id: String,
    pub offset: usize,
    pub values: Vec<f64>,
    pub stats: StatFeatures,
    pub rul_h: f64,
    pub end_time_h: f64,
}

/// Which traces contribute detection windows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetectSelection {
    /// Training set: windows of normal devices only.
    NormalOnly,
    /// Evaluation set: normal-device windows plus anomalous-device windows that contain a
    /// jump onset. Anomalous-device windows without an onset are dropped as ambiguous.
    Labeled,
}

/// Sliding `(input_len → horizon)` forecasting pairs over normalized traces.
pub fn forecast_windows(
    corpus: &[CurrentTrace],
    input_len: usize,
    horizon: usize,
) -> Result<WindowSet<ForecastSample>> {
    if input_len == 0 || horizon == 0 {
        return Err(Error::Argument("window and horizon must be positive".into()));
    }
    let span = input_len + horizon;
    let mut samples = Vec::new();
    let mut skipped = 0;
    for trace in corpus {
        let r = normalize(trace)?;
        if r.len() < span {
            skipped += 1;
            continue;
        }
        for offset in 0..=r.len() - span {
            samples.push(ForecastSample {
                device_id: trace.device_id.clone(),
                offset,
                inputs: r[offset..offset + input_len].to_vec(),
                targets: r[offset + input_len..offset + span].to_vec(),
            });
        }
    }
    Ok(WindowSet {
        samples,
        skipped_traces: skipped,
    })
}

/// Sliding detection windows of `len` normalized values.
pub fn detect_windows(
    corpus: &[CurrentTrace],
    len: usize,
    selection: DetectSelection,
) -> Result<WindowSet<DetectSample>> {
    if len == 0 {
        return Err(Error::Argument("window length must be positive".into()));
    }
    let mut samples = Vec::new();
    let mut skipped = 0;
    for trace in corpus {
        let anomalous_trace = trace.state == DeviceState::Anomalous;
        if anomalous_trace && selection == DetectSelection::NormalOnly {
            continue;
        }
        let r = normalize(trace)?;
        if r.len() < len {
            skipped += 1;
            continue;
        }
        for offset in 0..=r.len() - len {
            let (start, end) = (trace.times_h[offset], trace.times_h[offset + len - 1]);
            let has_onset = trace.jump_times_h.iter().any(|t| *t > start && *t <= end);
            if anomalous_trace && !has_onset {
                continue;
            }
            samples.push(DetectSample {
                device_id: trace.device_id.clone(),
                offset,
                values: r[offset..offset + len].to_vec(),
                anomalous: anomalous_trace,
            });
        }
    }
    Ok(WindowSet {
        samples,
        skipped_traces: skipped,
    })
}

/// First `len` normalized values of every normal trace (the GAN training set).
pub fn first_windows(corpus: &[CurrentTrace], len: usize) -> Result<WindowSet<Vec<f64>>> {
    let mut samples = Vec::new();
    let mut skipped = 0;
    for trace in corpus.iter().filter(|t| t.state == DeviceState::Normal) {
        let r = normalize(trace)?;
        if r.len() < len {
            skipped += 1;
            continue;
        }
        samples.push(r[..len].to_vec());
    }
    Ok(WindowSet {
        samples,
        skipped_traces: skipped,
    })
}

/// Sliding RUL windows labeled at their last timestamp.
///
/// Only traces with a failure time contribute, and only windows ending at or
/// before it.
pub fn rul_windows(corpus: &[CurrentTrace], len: usize) -> Result<WindowSet<RulSample>> {
    if len < 2 {
        return Err(Error::Argument("RUL windows need at least 2 values".into()));
    }
    let mut samples = Vec::new();
    let mut skipped = 0;
    for trace in corpus {
        let label = label_failure(trace);
        if label.failure_time_h.is_none() {
            continue;
        }
        let r = normalize(trace)?;
        if r.len() < len {
            skipped += 1;
            continue;
        }
        for offset in 0..=r.len() - len {
            let end = offset + len - 1;
            let Some(rul) = label.rul_h[end] else { continue };
            let values = r[offset..=end].to_vec();
            samples.push(RulSample {
                device_id: trace.device_id.clone(),
                offset,
                stats: stat_features(&values)?,
                values,
                rul_h: rul,
                end_time_h: trace.times_h[end],
            });
        }
    }
    Ok(WindowSet {
        samples,
        skipped_traces: skipped,
    })
}

/// Writes one JSON object per line.
pub fn write_corpus(path: &Path, corpus: &[CurrentTrace]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for trace in corpus {
        serde_json::to_writer(&mut w, trace)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_corpus(path: &Path) -> Result<Vec<CurrentTrace>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let trace: CurrentTrace = serde_json::from_str(&line)
            .map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), n + 1)))?;
        trace.validate()?;
        out.push(trace);
    }
    Ok(out)
}
